#pragma once

#include <stdexcept>
#include <string>

namespace rcg {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or a contract violation between configured parts
// (e.g. embedder dimension vs. index dimension).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Invalid caller input (bad request fields, unknown kb id, ...).
class RequestError : public Error {
 public:
  using Error::Error;
};

class IngestError : public Error {
 public:
  using Error::Error;
};

// Failure talking to an external embedding or LLM endpoint.
class UpstreamError : public Error {
 public:
  UpstreamError(const std::string& what, bool retryable, int attempts,
                int status = 0)
      : Error(what), retryable_(retryable), attempts_(attempts),
        status_(status) {}

  bool retryable() const { return retryable_; }
  int attempts() const { return attempts_; }
  // HTTP status reported by the upstream, 0 when the connection failed.
  int status() const { return status_; }

 private:
  bool retryable_;
  int attempts_;
  int status_;
};

// Prompt exceeds the configured context budget of the LLM.
class BudgetError : public Error {
 public:
  BudgetError(std::size_t estimate, std::size_t budget)
      : Error("prompt estimated at " + std::to_string(estimate) +
              " tokens exceeds context budget of " + std::to_string(budget)),
        estimate_(estimate), budget_(budget) {}

  std::size_t estimate() const { return estimate_; }
  std::size_t budget() const { return budget_; }

 private:
  std::size_t estimate_;
  std::size_t budget_;
};

}  // namespace rcg
