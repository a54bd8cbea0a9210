#include "pwrelax/cli.hpp"

#ifndef PWRELAX_VERSION
#define PWRELAX_VERSION "unknown"
#endif

int main(int argc, char** argv) {
    pwrelax::cli::Context ctx;
    ctx.version = PWRELAX_VERSION;
    return pwrelax::cli::run(argc, argv, ctx);
}
