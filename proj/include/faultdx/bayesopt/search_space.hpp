#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace faultdx::bayesopt {

enum class DimKind { continuous, integer, categorical };
enum class Scale { linear, log };

struct Dim {
  std::string name;
  DimKind kind = DimKind::continuous;
  double lo = 0.0;
  double hi = 1.0;
  Scale scale = Scale::linear;
  std::vector<std::string> options;

  static Dim continuous(std::string name, double lo, double hi, Scale scale = Scale::linear);
  static Dim integer(std::string name, std::int64_t lo, std::int64_t hi);
  static Dim categorical(std::string name, std::vector<std::string> options);

  /// Width of this dimension in the unit-cube encoding.
  std::size_t encoded_width() const { return kind == DimKind::categorical ? options.size() : 1; }

  bool operator==(const Dim&) const = default;
};

/// A point in a search space. Integer dims hold integral values, categorical
/// dims hold the option index.
struct Config {
  std::vector<double> values;

  bool operator==(const Config&) const = default;
};

class SearchSpace {
 public:
  SearchSpace() = default;
  /// Throws InvalidArgument when a dimension is malformed.
  explicit SearchSpace(std::vector<Dim> dims);

  const std::vector<Dim>& dims() const noexcept { return dims_; }
  std::size_t size() const noexcept { return dims_.size(); }
  std::size_t encoded_size() const noexcept { return encoded_size_; }

  /// Index of the named dimension; throws InvalidArgument when absent.
  std::size_t index_of(const std::string& name) const;

  /// Throws InvalidArgument when a value lies outside its dimension.
  void check(const Config& config) const;

  /// Maps a config into [0, 1]^encoded_size.
  std::vector<double> to_unit(const Config& config) const;

  /// Inverse of to_unit. Integers round to nearest, categoricals take the
  /// argmax of their one-hot block, and coordinates are clamped to [0, 1].
  Config from_unit(const std::vector<double>& unit) const;

  nlohmann::json config_to_json(const Config& config) const;
  Config config_from_json(const nlohmann::json& j) const;

  bool operator==(const SearchSpace&) const = default;

 private:
  std::vector<Dim> dims_;
  std::size_t encoded_size_ = 0;
};

void to_json(nlohmann::json& j, const Dim& dim);
void from_json(const nlohmann::json& j, Dim& dim);

/// Stratified initial design: per continuous/integer dimension, one sample
/// in each of the n equal-width strata (randomly paired across dimensions);
/// categoricals uniform.
std::vector<Config> latin_hypercube(const SearchSpace& space, std::size_t n, std::uint64_t seed);

}  // namespace faultdx::bayesopt
