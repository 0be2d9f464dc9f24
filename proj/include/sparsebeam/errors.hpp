#pragma once

#include <stdexcept>
#include <string>

namespace sparsebeam {

/// Process exit codes used by the command-line front end.
enum class ExitCode : int {
  ok = 0,
  config = 2,
  data = 3,
  numerical = 4,
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  [[nodiscard]] virtual ExitCode exit_code() const noexcept { return ExitCode::data; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  [[nodiscard]] ExitCode exit_code() const noexcept override { return ExitCode::config; }
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class StepError : public Error {
 public:
  using Error::Error;
};

/// A pluggable component broke its contract (e.g. denoiser returned the wrong shape).
class ContractError : public Error {
 public:
  using Error::Error;
};

class GeometryError : public Error {
 public:
  using Error::Error;
};

class AssemblyError : public Error {
 public:
  AssemblyError(const std::string& what, std::size_t block_index)
      : Error(what + " (block " + std::to_string(block_index) + ")"), block_index_(block_index) {}
  [[nodiscard]] std::size_t block_index() const noexcept { return block_index_; }

 private:
  std::size_t block_index_;
};

class ReconstructionError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t iteration)
      : Error(what + " at iteration " + std::to_string(iteration)), iteration_(iteration) {}
  [[nodiscard]] ExitCode exit_code() const noexcept override { return ExitCode::numerical; }
  [[nodiscard]] std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t iteration_;
};

/// Failure inside one parallel block task; carries the block index and, for
/// pipeline runs, the stage name.
class BlockTaskError : public Error {
 public:
  BlockTaskError(const std::string& what, std::size_t block_index, ExitCode code)
      : Error(what), block_index_(block_index), code_(code) {}
  [[nodiscard]] ExitCode exit_code() const noexcept override { return code_; }
  [[nodiscard]] std::size_t block_index() const noexcept { return block_index_; }

 private:
  std::size_t block_index_;
  ExitCode code_;
};

}  // namespace sparsebeam
