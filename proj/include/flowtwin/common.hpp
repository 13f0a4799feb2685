#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace flowtwin {

template <typename S>
using Vec2 = Eigen::Matrix<S, 2, 1>;
template <typename S>
using Mat2 = Eigen::Matrix<S, 2, 2>;
template <typename S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;
// Row-major so flattened weights match the model file layout.
template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Vec2d = Vec2<double>;
using Mat2d = Mat2<double>;
using VecXd = VecX<double>;
using MatXd = MatX<double>;

inline constexpr double kSecondsPerDay = 86400.0;

inline constexpr double kmh_to_mps(double kmh) { return kmh / 3.6; }

enum class ErrorCode {
  NoPath,
  UnknownId,
  DegenerateData,
  ZeroDenominator,
  DimensionMismatch,
  EmptyDataset,
  LabelOutOfRange,
  AllZero,
  ZeroVector,
  Validation,
  Io,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

struct FieldError {
  std::string path;  // JSON pointer or CSV "file:line"
  std::string message;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<FieldError> errors)
      : Error(ErrorCode::Validation, summarize(errors)), errors_(std::move(errors)) {}
  ValidationError(std::string path, std::string message)
      : ValidationError(std::vector<FieldError>{{std::move(path), std::move(message)}}) {}

  const std::vector<FieldError>& errors() const noexcept { return errors_; }

 private:
  static std::string summarize(const std::vector<FieldError>& errors);
  std::vector<FieldError> errors_;
};

}  // namespace flowtwin
