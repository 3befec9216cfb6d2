#pragma once

#include <stdexcept>
#include <string>

namespace storyboard {

// All library failures derive from Error so callers can catch one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

// Softmax row whose every entry is masked out.
class DegenerateRowError : public Error {
 public:
  using Error::Error;
};

class UndefinedSimilarityError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

class CacheMissError : public Error {
 public:
  using Error::Error;
};

class IntegrityError : public Error {
 public:
  using Error::Error;
};

class ReproducibilityError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class InsufficientShotsError : public Error {
 public:
  using Error::Error;
};

// Wraps a failure raised inside one denoiser layer with its (t, layer) context.
class StepError : public Error {
 public:
  StepError(int t, int layer, const std::string& what)
      : Error("denoiser step t=" + std::to_string(t) + " layer=" + std::to_string(layer) +
              ": " + what),
        t_(t),
        layer_(layer) {}

  int t() const { return t_; }
  int layer() const { return layer_; }

 private:
  int t_;
  int layer_;
};

}  // namespace storyboard
