#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

namespace faultdx::dataset {

/// Full-scale defaults: 10725 plant parameters per time step, 21 fault classes.
inline constexpr std::size_t kDefaultParams = 10725;
inline constexpr std::size_t kDefaultClasses = 21;

struct FaultClass {
  std::uint32_t id = 0;
  std::string name;

  bool operator==(const FaultClass&) const = default;
};

/// One time-step snapshot of raw plant readings.
struct SensorFrame {
  std::vector<float> values;
  std::uint32_t label = 0;
  std::uint32_t scenario_id = 0;
  std::uint32_t t = 0;

  bool operator==(const SensorFrame&) const = default;
};

struct SyntheticProvenance {
  std::uint64_t seed = 0;
  std::string spec_hash;
  bool operator==(const SyntheticProvenance&) const = default;
};

struct IngestedProvenance {
  std::string path_hash;
  bool operator==(const IngestedProvenance&) const = default;
};

using Provenance = std::variant<SyntheticProvenance, IngestedProvenance>;

/// Labeled frames plus the class table. Immutable once built; the
/// constructor checks the invariants.
class Dataset {
 public:
  Dataset(std::vector<SensorFrame> frames, std::vector<FaultClass> classes, Provenance provenance);

  const std::vector<SensorFrame>& frames() const noexcept { return frames_; }
  const std::vector<FaultClass>& classes() const noexcept { return classes_; }
  const Provenance& provenance() const noexcept { return provenance_; }

  std::size_t size() const noexcept { return frames_.size(); }
  std::size_t n_params() const noexcept { return frames_.front().values.size(); }
  std::size_t n_classes() const noexcept { return classes_.size(); }

  /// Frame count per class id.
  std::vector<std::size_t> class_counts() const;

  /// New dataset holding the listed frames (same classes and provenance).
  Dataset select(const std::vector<std::size_t>& indices) const;

  bool operator==(const Dataset&) const = default;

 private:
  std::vector<SensorFrame> frames_;
  std::vector<FaultClass> classes_;
  Provenance provenance_;
};

/// Parameters of the seeded fault-scenario generator.
///
/// Classes are built from `n_components` elementary fault components: the
/// first classes are single faults, the remaining ones pairwise composites.
/// Each component owns `signal_dims` channels, laid out as a repeated shape
/// in tiles of the square image the frame is later encoded into (channels
/// beyond the available tiles are drawn at random). A scenario is one
/// transient of `scenario_length` consecutive time steps.
struct ScenarioSpec {
  std::size_t n_classes = kDefaultClasses;
  std::size_t frames_per_class = 100;
  std::size_t n_params = kDefaultParams;
  std::size_t signal_dims = 900;
  double noise_sigma = 0.05;
  double drift_amplitude = 0.02;
  std::size_t scenario_length = 20;
  std::uint64_t seed = 2024;

  /// Throws InvalidArgument when an invariant fails.
  void validate() const;

  bool operator==(const ScenarioSpec&) const = default;
};

void to_json(nlohmann::json& j, const ScenarioSpec& spec);
void from_json(const nlohmann::json& j, ScenarioSpec& spec);

/// Number of elementary components needed so singles + pairs cover n_classes.
std::size_t component_count(std::size_t n_classes);

/// Components active in each class, in class-id order.
std::vector<std::vector<std::size_t>> class_components(std::size_t n_classes);

/// Channel indices owned by each component for the given spec.
std::vector<std::vector<std::size_t>> component_channels(const ScenarioSpec& spec);

Dataset generate_synthetic(const ScenarioSpec& spec);

struct CsvSchema {
  /// Column name when the file has a header, else a zero-based column index.
  std::string label_column;
  /// Parameter columns (names or indices). Empty selects every non-label column.
  std::vector<std::string> param_columns;
  bool has_header = true;
};

Dataset ingest_csv(const std::filesystem::path& path, const CsvSchema& schema);

/// Stratified train/test membership as sorted frame indices.
struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

SplitIndices split_indices(const Dataset& ds, double train_frac, std::uint64_t seed);

std::pair<Dataset, Dataset> split(const Dataset& ds, double train_frac, std::uint64_t seed);

/// Sorted frame indices of a stratified per-class sample of round(frac * n_c).
std::vector<std::size_t> subsample_indices(const Dataset& ds, double frac, std::uint64_t seed);

Dataset subsample(const Dataset& ds, double frac, std::uint64_t seed);

/// Writes frames.bin, labels.u16, scenarios.u32, classes.json and, when
/// `spec` is given, spec.json into `dir`.
void save(const Dataset& ds, const std::filesystem::path& dir, const ScenarioSpec* spec);

Dataset load(const std::filesystem::path& dir);

}  // namespace faultdx::dataset
