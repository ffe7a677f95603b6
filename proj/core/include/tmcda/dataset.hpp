#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace tmcda {

enum class Movement { left = 0, through = 1, right = 2 };

inline constexpr std::array<Movement, 3> kMovements{Movement::left, Movement::through,
                                                    Movement::right};

std::string_view movement_name(Movement m);
Movement parse_movement(std::string_view name);
// Label column holding the counts of a movement (v_LM, v_TM, v_RM).
std::string_view label_column(Movement m);

enum class Approach { northbound = 1, southbound = 2, eastbound = 3, westbound = 4 };

std::string_view approach_code(Approach a);
Approach parse_approach(std::string_view code);

enum class RoadType { major = 1, minor = 2 };
enum class LeftTurnType { permissive_only = 1, protected_permissive = 2, protected_only = 3 };

RoadType parse_road_type(std::string_view text);
std::string_view road_type_name(RoadType r);
LeftTurnType parse_left_turn_type(std::string_view text);
std::string_view left_turn_type_name(LeftTurnType l);

/// Fixed, versioned predictor layout. Row order matches the coefficient report.
struct FeatureSchema {
  static constexpr int kVersion = 1;
  static constexpr std::size_t kSize = 25;

  enum class Kind { real, count, categorical };

  static const std::array<std::string_view, kSize>& names();
  static std::string_view description(std::size_t column);
  static Kind kind(std::size_t column);
  static std::optional<std::size_t> index_of(std::string_view name);
};

// Column indices into a FeatureVector.
namespace col {
inline constexpr std::size_t o_TM = 0, d_TM = 1, g_TM = 2, c_TM = 3, m_TM = 4, s_TM = 5;
inline constexpr std::size_t o_LM = 6, d_LM = 7, g_LM = 8, c_LM = 9, m_LM = 10, s_LM = 11,
                             p_LM = 12;
inline constexpr std::size_t l_SL = 13, l_EL = 14, l_TL = 15, l_ER = 16, l_SR = 17;
inline constexpr std::size_t e_POIE = 18, e_POIC = 19;
inline constexpr std::size_t road_type = 20, left_turn_type = 21, direction = 22;
inline constexpr std::size_t h_MOH = 23, h_HOD = 24;
}  // namespace col

using FeatureVector = std::array<double, FeatureSchema::kSize>;
// Counts indexed by Movement: {v_LM, v_TM, v_RM}.
using LabelTriple = std::array<double, 3>;

struct Instance {
  std::string intersection_id;
  Approach approach = Approach::northbound;
  int interval_index = 0;
  FeatureVector features{};
  std::optional<LabelTriple> labels;
};

// Checks one instance against the schema invariants; throws DomainError naming the column.
void validate_instance(const Instance& inst);

class Dataset {
 public:
  Dataset(std::vector<Instance> instances, std::string provenance);

  std::size_t size() const noexcept { return instances_.size(); }
  const std::vector<Instance>& instances() const noexcept { return instances_; }
  const Instance& operator[](std::size_t i) const { return instances_[i]; }
  const std::string& provenance() const noexcept { return provenance_; }

  // True when every instance carries labels.
  bool labeled() const noexcept { return labeled_; }

  Eigen::MatrixXd features() const;
  Eigen::VectorXd labels(Movement m) const;
  // Sorted, unique.
  std::vector<std::string> intersection_ids() const;

 private:
  std::vector<Instance> instances_;
  std::string provenance_;
  bool labeled_ = false;
};

/// Target-domain instances. Carries no label storage at all.
class TargetFeatures {
 public:
  struct Row {
    std::string intersection_id;
    Approach approach = Approach::northbound;
    int interval_index = 0;
    FeatureVector features{};
  };

  explicit TargetFeatures(std::vector<Row> rows);

  std::size_t size() const noexcept { return rows_.size(); }
  const std::vector<Row>& rows() const noexcept { return rows_; }
  Eigen::MatrixXd features() const;

 private:
  std::vector<Row> rows_;
};

/// Target labels, visible only to the scoring harness.
class HeldOutLabels {
 public:
  HeldOutLabels() = default;
  explicit HeldOutLabels(std::vector<std::optional<LabelTriple>> labels)
      : labels_(std::move(labels)) {}

  std::size_t size() const noexcept { return labels_.size(); }
  bool complete() const noexcept;
  Eigen::VectorXd movement(Movement m) const;

 private:
  std::vector<std::optional<LabelTriple>> labels_;
};

struct DomainSplit {
  std::string target_id;
  Dataset source;
  TargetFeatures target_features;
  HeldOutLabels held_out_labels;
};

DomainSplit split_domains(const Dataset& data, std::string_view target_id);

// ---- categorical and temporal encodings ----

using RawRecord = std::map<std::string, std::string, std::less<>>;

struct EncodedCategoricals {
  int road_type = 0;
  int left_turn_type = 0;
  std::optional<int> direction;
  int minute_of_hour = 0;
  int hour_of_day = 0;
};

struct TimeSlot {
  int minute_of_hour = 0;  // 1..4
  int hour_of_day = 0;     // 0..23
};

TimeSlot encode_time(int hour, int minute);

/// Encodes road type, left-turn type, optional direction and the time slot of a raw record.
/// Recognised keys: road_type, left_turn_type, direction, and either timestamp
/// ("HH:MM" or "YYYY-MM-DD HH:MM[:SS]") or the pair quarter/hour.
EncodedCategoricals encode_categoricals(const RawRecord& raw);

// ---- delimited text I/O ----

Dataset load_table(const std::filesystem::path& path);
Dataset read_table(std::istream& in, std::string provenance);
void write_table(const Dataset& data, std::ostream& out);

}  // namespace tmcda
