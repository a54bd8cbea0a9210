#pragma once

#include <stdexcept>
#include <string>

namespace pwrelax {

/// Base class for every failure raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Argument outside the supported range (e.g. eigenfunction order too high).
class DomainError : public Error {
public:
    using Error::Error;
};

/// |psi|^2 fell below the node threshold; the velocity is undefined there.
class NodeError : public Error {
public:
    using Error::Error;
};

/// Fewer than the required fraction of trajectories could be integrated.
class AbortedRun : public Error {
public:
    AbortedRun(const std::string& what, double accuracy)
        : Error(what), accuracy_fraction(accuracy) {}
    double accuracy_fraction;
};

/// A coarse-graining cell received no valid sample point.
class CellStarved : public Error {
public:
    using Error::Error;
};

/// Some cell has positive density but zero equilibrium density.
class InfiniteHBar : public Error {
public:
    using Error::Error;
};

class DegenerateSeries : public Error {
public:
    using Error::Error;
};

class NonPositiveValue : public Error {
public:
    using Error::Error;
};

/// A trajectory needed for a derived quantity could not be integrated.
class IntegrationFailure : public Error {
public:
    using Error::Error;
};

/// Malformed configuration, phase document or data file.
class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace pwrelax
