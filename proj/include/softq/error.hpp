#pragma once

#include <stdexcept>
#include <string>

namespace softq {

/// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed arguments or violated type invariants.
struct InvalidArgument : Error {
    using Error::Error;
};

/// An operation would enumerate more trajectories than the configured cap.
struct SizeError : Error {
    using Error::Error;
};

/// A policy does not cover a reachable state.
struct CoverageError : Error {
    using Error::Error;
};

/// The reference policy assigns zero probability where positive mass is required.
struct ReferenceSupportError : Error {
    using Error::Error;
};

/// A trajectory-level loss was asked to run on a stochastic MDP.
struct DeterminismError : Error {
    using Error::Error;
};

/// A per-step loss was asked to run on outcome-only reward data.
struct RewardGranularityError : Error {
    using Error::Error;
};

/// Malformed file contents (env JSON, checkpoints, datasets, CSV).
struct ParseError : Error {
    using Error::Error;
};

/// Invalid experiment configuration (unknown keys, bad grids, missing files).
struct ConfigError : Error {
    using Error::Error;
};

}  // namespace softq
