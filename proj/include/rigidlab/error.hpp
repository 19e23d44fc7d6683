#pragma once

#include <stdexcept>
#include <string>

namespace rigidlab
{

// Base of every error raised by the library. Callers that only need to know
// "something in rigidlab failed" catch this; the CLI maps it to exit code 3.
class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

// Invalid construction arguments: wrong dimensions, non-finite coordinates,
// degenerate quadratic forms and the like.
class InvalidArgument : public Error
{
public:
    using Error::Error;
};

// Arithmetic left the real line (sqrt of a negative, division by zero,
// overflow) or a point is outside the declared domain of a field.
class DomainError : public Error
{
public:
    using Error::Error;
};

// A derivative was requested that the field cannot provide at that point.
class DifferentiationError : public Error
{
public:
    using Error::Error;
};

class IntegrationError : public Error
{
public:
    using Error::Error;
};

// A sampled vector field failed the closedness test and so is not locally
// Hamiltonian to working precision.
class ClosednessError : public Error
{
public:
    using Error::Error;
};

class TopologyError : public Error
{
public:
    using Error::Error;
};

// A sequence that was declared convergent moved away from its limit.
class ConvergenceError : public Error
{
public:
    using Error::Error;
};

} // namespace rigidlab
