#pragma once

#include <stdexcept>

namespace koopsafe {

// Base class for everything the library throws on purpose.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A computation produced NaN or Inf (bad parameters, diverging simulation).
struct NonFiniteError : Error { using Error::Error; };

// Vector or matrix sizes violate the operation's contract.
struct DimensionError : Error { using Error::Error; };

// Training loss became non-finite.
struct DivergedError : Error { using Error::Error; };

// File is malformed, has inconsistent shapes, or an unknown format version.
struct FormatError : Error { using Error::Error; };

// A normalization channel has max == min over the fitted data.
struct DegenerateChannelError : Error { using Error::Error; };

// A requested split would leave train, val, or test empty.
struct TooFewTrajectoriesError : Error { using Error::Error; };

// An evaluation was handed an empty test set.
struct EmptyTestSetError : Error { using Error::Error; };

// The governor needs a trained model and none is attached.
struct ModelMissingError : Error { using Error::Error; };

// The governor problem is undefined (non-finite constraint data).
struct InfeasibleError : Error { using Error::Error; };

// Experiment configuration is invalid: unknown key, bad value, missing file.
struct ConfigError : Error { using Error::Error; };

}  // namespace koopsafe
