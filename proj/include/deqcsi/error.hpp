// Copyright 2026 The deq-csi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace deqcsi {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape disagreement between two operands. `axis` names the offending axis.
class DimensionError : public Error {
 public:
  DimensionError(std::string op, std::string axis, std::size_t expected,
                 std::size_t actual)
      : Error(op + ": dimension mismatch on axis '" + axis + "' (expected " +
              std::to_string(expected) + ", got " + std::to_string(actual) +
              ")"),
        axis_(std::move(axis)),
        expected_(expected),
        actual_(actual) {}

  const std::string& axis() const noexcept { return axis_; }
  std::size_t expected() const noexcept { return expected_; }
  std::size_t actual() const noexcept { return actual_; }

 private:
  std::string axis_;
  std::size_t expected_;
  std::size_t actual_;
};

/// Malformed dataset or checkpoint file.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::uint64_t offset)
      : Error("parse error at byte " + std::to_string(offset) + ": " + what),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

/// A fixed-point iteration produced a non-finite latent.
class DivergenceError : public Error {
 public:
  explicit DivergenceError(std::size_t iteration)
      : Error("fixed-point iteration diverged at iteration " +
              std::to_string(iteration)),
        iteration_(iteration) {}

  std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t iteration_;
};

/// A FLOPs budget that cannot afford a single equilibrium iteration.
class BudgetInfeasible : public Error {
 public:
  BudgetInfeasible(const std::string& side, std::uint64_t budget,
                   std::uint64_t minimum)
      : Error(side + " budget " + std::to_string(budget) +
              " is infeasible; minimum feasible budget is " +
              std::to_string(minimum)),
        minimum_(minimum) {}

  std::uint64_t minimum() const noexcept { return minimum_; }

 private:
  std::uint64_t minimum_;
};

}  // namespace deqcsi
