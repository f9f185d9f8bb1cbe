#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace simdistill {

// Base of every error the library throws. `exit_code` is what the CLI maps
// the error to.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what, int exit_code = 1)
        : std::runtime_error(what), exit_code_(exit_code) {}
    int exit_code() const noexcept { return exit_code_; }

private:
    int exit_code_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error("config error: " + what, 2) {}
};

class AdapterError : public Error {
public:
    explicit AdapterError(const std::string& what) : Error("adapter error: " + what, 2) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error("I/O error: " + what, 1) {}
};

class EmptyDatasetError : public Error {
public:
    explicit EmptyDatasetError(const std::string& what) : Error("empty dataset: " + what, 1) {}
};

class ContractViolation : public Error {
public:
    explicit ContractViolation(const std::string& what) : Error("contract violation: " + what, 1) {}
};

class ScenePoolExhausted : public Error {
public:
    explicit ScenePoolExhausted(const std::string& what) : Error("scene pool exhausted: " + what, 1) {}
};

// An upstream artifact a stage depends on is absent.
class MissingArtifact : public Error {
public:
    explicit MissingArtifact(const std::string& artifact)
        : Error("missing upstream artifact: " + artifact, 3), artifact_(artifact) {}
    const std::string& artifact() const noexcept { return artifact_; }

private:
    std::string artifact_;
};

// Permanent 4xx from an endpoint.
class RequestRejected : public Error {
public:
    RequestRejected(int status, const std::string& body_excerpt)
        : Error("request rejected with HTTP " + std::to_string(status) + ": " + body_excerpt, 4),
          status_(status) {}
    int status() const noexcept { return status_; }

private:
    int status_;
};

// Retries exhausted on a transient failure.
class EndpointFailure : public Error {
public:
    explicit EndpointFailure(const std::string& what) : Error("endpoint failure: " + what, 4) {}
};

}  // namespace simdistill
