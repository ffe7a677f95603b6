#include "tmcda/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "tmcda/error.hpp"
#include "tmcda/text.hpp"

namespace tmcda {

namespace {

constexpr std::array<std::string_view, FeatureSchema::kSize> kNames{
    "o_TM", "d_TM", "g_TM", "c_TM", "m_TM", "s_TM", "o_LM",  "d_LM",   "g_LM",
    "c_LM", "m_LM", "s_LM", "p_LM", "l_SL", "l_EL", "l_TL",  "l_ER",   "l_SR",
    "e_POIE", "e_POIC", "r", "l", "direction", "h_MOH", "h_HOD"};

constexpr std::array<std::string_view, FeatureSchema::kSize> kDescriptions{
    "Through movement detector occupancy time",
    "Through movement detector trigger counts",
    "Through movement green time duration",
    "Through movement cycle counts",
    "Through movement average of time differences between consecutive detections",
    "Through movement standard deviation of time differences between consecutive detections",
    "Left-turn movement detector occupancy time",
    "Left-turn movement detector trigger counts",
    "Left-turn movement green time duration",
    "Left-turn movement cycle counts",
    "Left-turn movement average of time differences between consecutive detections",
    "Left-turn movement standard deviation of time differences between consecutive detections",
    "Left-turn movement permissive green time",
    "Number of shared left turn lanes",
    "Number of exclusive left turn lanes",
    "Number of through lanes",
    "Number of exclusive right turn lanes",
    "Number of shared right turn lanes",
    "Number of employees of all POI",
    "POI categories count",
    "Road type",
    "Left-turn type",
    "Direction",
    "Minute-of-hour",
    "Hour-of-day"};

struct CategoricalRange {
  int lo;
  int hi;
};

std::optional<CategoricalRange> categorical_range(std::size_t column) {
  switch (column) {
    case col::road_type: return CategoricalRange{1, 2};
    case col::left_turn_type: return CategoricalRange{1, 3};
    case col::direction: return CategoricalRange{1, 4};
    case col::h_MOH: return CategoricalRange{1, 4};
    case col::h_HOD: return CategoricalRange{0, 23};
    default: return std::nullopt;
  }
}

bool is_integral(double v) { return std::floor(v) == v; }

constexpr std::array<std::string_view, 3> kLabelColumns{"v_LM", "v_TM", "v_RM"};
constexpr std::array<std::string_view, 3> kKeyColumns{"intersection_id", "approach",
                                                      "interval_index"};

std::string normalise_category(std::string_view text) {
  std::string s = text::lowercase(text::trim(text));
  for (char& c : s)
    if (c == '_' || c == ' ') c = '-';
  return s;
}

std::string strip_suffix(std::string s, std::string_view suffix) {
  if (s.size() > suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0)
    s.resize(s.size() - suffix.size());
  return s;
}

}  // namespace

// ---- enumerations ----

std::string_view movement_name(Movement m) {
  switch (m) {
    case Movement::left: return "left";
    case Movement::through: return "through";
    case Movement::right: return "right";
  }
  return "?";
}

Movement parse_movement(std::string_view name) {
  const auto s = text::lowercase(text::trim(name));
  if (s == "left") return Movement::left;
  if (s == "through") return Movement::through;
  if (s == "right") return Movement::right;
  throw ValidationError("unknown movement '" + std::string(name) + "'");
}

std::string_view label_column(Movement m) { return kLabelColumns[static_cast<int>(m)]; }

std::string_view approach_code(Approach a) {
  switch (a) {
    case Approach::northbound: return "NB";
    case Approach::southbound: return "SB";
    case Approach::eastbound: return "EB";
    case Approach::westbound: return "WB";
  }
  return "?";
}

Approach parse_approach(std::string_view code) {
  const auto s = text::lowercase(text::trim(code));
  if (s == "nb" || s == "northbound") return Approach::northbound;
  if (s == "sb" || s == "southbound") return Approach::southbound;
  if (s == "eb" || s == "eastbound") return Approach::eastbound;
  if (s == "wb" || s == "westbound") return Approach::westbound;
  throw SchemaError("approach: unknown direction '" + std::string(code) + "'");
}

RoadType parse_road_type(std::string_view text) {
  const auto s = strip_suffix(normalise_category(text), "-road");
  if (s == "major" || s == "1") return RoadType::major;
  if (s == "minor" || s == "2") return RoadType::minor;
  throw SchemaError("road_type: unknown category '" + std::string(text) + "'");
}

std::string_view road_type_name(RoadType r) {
  return r == RoadType::major ? "major road" : "minor road";
}

LeftTurnType parse_left_turn_type(std::string_view text) {
  auto s = normalise_category(text);
  s = strip_suffix(strip_suffix(s, "-left-turn"), "-leftturn");
  if (s == "permissive-only" || s == "1") return LeftTurnType::permissive_only;
  if (s == "protected-permissive" || s == "2") return LeftTurnType::protected_permissive;
  if (s == "protected-only" || s == "3") return LeftTurnType::protected_only;
  throw SchemaError("left_turn_type: unknown category '" + std::string(text) + "'");
}

std::string_view left_turn_type_name(LeftTurnType l) {
  switch (l) {
    case LeftTurnType::permissive_only: return "permissive-only left-turn";
    case LeftTurnType::protected_permissive: return "protected-permissive left-turn";
    case LeftTurnType::protected_only: return "protected-only left-turn";
  }
  return "?";
}

// ---- schema ----

const std::array<std::string_view, FeatureSchema::kSize>& FeatureSchema::names() { return kNames; }

std::string_view FeatureSchema::description(std::size_t column) { return kDescriptions.at(column); }

FeatureSchema::Kind FeatureSchema::kind(std::size_t column) {
  switch (column) {
    case col::d_TM:
    case col::c_TM:
    case col::d_LM:
    case col::c_LM:
    case col::l_SL:
    case col::l_EL:
    case col::l_TL:
    case col::l_ER:
    case col::l_SR:
    case col::e_POIE:
    case col::e_POIC: return Kind::count;
    case col::road_type:
    case col::left_turn_type:
    case col::direction:
    case col::h_MOH:
    case col::h_HOD: return Kind::categorical;
    default: return Kind::real;
  }
}

std::optional<std::size_t> FeatureSchema::index_of(std::string_view name) {
  const auto it = std::find(kNames.begin(), kNames.end(), name);
  if (it == kNames.end()) return std::nullopt;
  return static_cast<std::size_t>(it - kNames.begin());
}

void validate_instance(const Instance& inst) {
  if (inst.interval_index < 0)
    throw DomainError("interval_index: negative value " + std::to_string(inst.interval_index));
  for (std::size_t j = 0; j < FeatureSchema::kSize; ++j) {
    const double v = inst.features[j];
    const std::string name(kNames[j]);
    if (!std::isfinite(v)) throw DomainError(name + ": non-finite value");
    if (v < 0.0) throw DomainError(name + ": negative value " + text::format_number(v));
    const auto kind = FeatureSchema::kind(j);
    if (kind != FeatureSchema::Kind::real && !is_integral(v))
      throw DomainError(name + ": expected an integer, got " + text::format_number(v));
    if (auto range = categorical_range(j); range && (v < range->lo || v > range->hi))
      throw DomainError(name + ": code " + text::format_number(v) + " outside [" +
                        std::to_string(range->lo) + ", " + std::to_string(range->hi) + "]");
  }
  if (inst.features[col::direction] != static_cast<double>(inst.approach))
    throw DomainError("direction: code " + text::format_number(inst.features[col::direction]) +
                      " disagrees with approach " + std::string(approach_code(inst.approach)));
  if (inst.labels) {
    for (std::size_t m = 0; m < 3; ++m) {
      const double v = (*inst.labels)[m];
      const std::string name(kLabelColumns[m]);
      if (!std::isfinite(v) || v < 0.0 || !is_integral(v))
        throw DomainError(name + ": expected a non-negative integer count, got " +
                          text::format_number(v));
    }
  }
}

// ---- Dataset ----

Dataset::Dataset(std::vector<Instance> instances, std::string provenance)
    : instances_(std::move(instances)), provenance_(std::move(provenance)) {
  if (instances_.empty()) throw SchemaError("dataset must contain at least one instance");
  for (std::size_t i = 0; i < instances_.size(); ++i) {
    try {
      validate_instance(instances_[i]);
    } catch (const DomainError& e) {
      throw DomainError("instance " + std::to_string(i) + ": " + e.what());
    }
  }
  labeled_ = std::all_of(instances_.begin(), instances_.end(),
                         [](const Instance& inst) { return inst.labels.has_value(); });
}

Eigen::MatrixXd Dataset::features() const {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(size()), FeatureSchema::kSize);
  for (std::size_t i = 0; i < size(); ++i)
    for (std::size_t j = 0; j < FeatureSchema::kSize; ++j)
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = instances_[i].features[j];
  return x;
}

Eigen::VectorXd Dataset::labels(Movement m) const {
  Eigen::VectorXd y(static_cast<Eigen::Index>(size()));
  for (std::size_t i = 0; i < size(); ++i) {
    if (!instances_[i].labels)
      throw SchemaError("instance " + std::to_string(i) + " has no " +
                        std::string(label_column(m)) + " label");
    y(static_cast<Eigen::Index>(i)) = (*instances_[i].labels)[static_cast<int>(m)];
  }
  return y;
}

std::vector<std::string> Dataset::intersection_ids() const {
  std::set<std::string> ids;
  for (const auto& inst : instances_) ids.insert(inst.intersection_id);
  return {ids.begin(), ids.end()};
}

TargetFeatures::TargetFeatures(std::vector<Row> rows) : rows_(std::move(rows)) {}

Eigen::MatrixXd TargetFeatures::features() const {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(size()), FeatureSchema::kSize);
  for (std::size_t i = 0; i < size(); ++i)
    for (std::size_t j = 0; j < FeatureSchema::kSize; ++j)
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows_[i].features[j];
  return x;
}

bool HeldOutLabels::complete() const noexcept {
  return std::all_of(labels_.begin(), labels_.end(), [](const auto& l) { return l.has_value(); });
}

Eigen::VectorXd HeldOutLabels::movement(Movement m) const {
  Eigen::VectorXd y(static_cast<Eigen::Index>(labels_.size()));
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (!labels_[i]) throw SchemaError("held-out labels are missing for target row " +
                                       std::to_string(i));
    y(static_cast<Eigen::Index>(i)) = (*labels_[i])[static_cast<int>(m)];
  }
  return y;
}

DomainSplit split_domains(const Dataset& data, std::string_view target_id) {
  const auto ids = data.intersection_ids();
  if (std::find(ids.begin(), ids.end(), target_id) == ids.end())
    throw ValidationError("target intersection '" + std::string(target_id) +
                          "' does not occur in the dataset");
  if (ids.size() < 2)
    throw ValidationError("domain split needs at least two intersections, dataset has " +
                          std::to_string(ids.size()));

  std::vector<Instance> source;
  std::vector<TargetFeatures::Row> target;
  std::vector<std::optional<LabelTriple>> held_out;
  for (const auto& inst : data.instances()) {
    if (inst.intersection_id == target_id) {
      target.push_back({inst.intersection_id, inst.approach, inst.interval_index, inst.features});
      held_out.push_back(inst.labels);
    } else {
      source.push_back(inst);
    }
  }
  return DomainSplit{std::string(target_id),
                     Dataset(std::move(source), data.provenance() + " [source, target " +
                                                    std::string(target_id) + " held out]"),
                     TargetFeatures(std::move(target)), HeldOutLabels(std::move(held_out))};
}

// ---- encodings ----

TimeSlot encode_time(int hour, int minute) {
  if (hour < 0 || hour >= 24) throw DomainError("hour: " + std::to_string(hour) +
                                                " outside [0, 24)");
  if (minute < 0 || minute >= 60) throw DomainError("minute: " + std::to_string(minute) +
                                                    " outside [0, 60)");
  return {minute / 15 + 1, hour};
}

namespace {

int parse_int_field(std::string_view name, std::string_view value) {
  const auto v = text::parse_number(value);
  if (!v || !is_integral(*v))
    throw SchemaError(std::string(name) + ": expected an integer, got '" + std::string(value) + "'");
  return static_cast<int>(*v);
}

TimeSlot parse_timestamp(std::string_view ts) {
  ts = text::trim(ts);
  // Accept "HH:MM", "HH:MM:SS", "YYYY-MM-DD HH:MM[:SS]" and the ISO 'T' separator.
  if (const auto sep = ts.find_first_of(" T"); sep != std::string_view::npos)
    ts = ts.substr(sep + 1);
  const auto colon = ts.find(':');
  if (colon == std::string_view::npos)
    throw SchemaError("timestamp: cannot parse '" + std::string(ts) + "'");
  const int hour = parse_int_field("timestamp hour", ts.substr(0, colon));
  auto rest = ts.substr(colon + 1);
  if (const auto c2 = rest.find(':'); c2 != std::string_view::npos) rest = rest.substr(0, c2);
  const int minute = parse_int_field("timestamp minute", rest);
  return encode_time(hour, minute);
}

}  // namespace

EncodedCategoricals encode_categoricals(const RawRecord& raw) {
  auto field = [&](std::string_view key) -> const std::string& {
    const auto it = raw.find(key);
    if (it == raw.end()) throw SchemaError("raw record is missing field '" + std::string(key) + "'");
    return it->second;
  };

  EncodedCategoricals out;
  out.road_type = static_cast<int>(parse_road_type(field("road_type")));
  out.left_turn_type = static_cast<int>(parse_left_turn_type(field("left_turn_type")));
  if (const auto it = raw.find("direction"); it != raw.end())
    out.direction = static_cast<int>(parse_approach(it->second));

  TimeSlot slot;
  if (raw.contains("timestamp")) {
    slot = parse_timestamp(field("timestamp"));
  } else {
    const int quarter = parse_int_field("quarter", field("quarter"));
    const int hour = parse_int_field("hour", field("hour"));
    if (quarter < 1 || quarter > 4)
      throw DomainError("quarter: " + std::to_string(quarter) + " outside [1, 4]");
    slot = encode_time(hour, (quarter - 1) * 15);
  }
  out.minute_of_hour = slot.minute_of_hour;
  out.hour_of_day = slot.hour_of_day;
  return out;
}

// ---- delimited text ----

Dataset load_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open " + path.string());
  return read_table(in, path.string());
}

Dataset read_table(std::istream& in, std::string provenance) {
  std::string line;
  if (!std::getline(in, line)) throw SchemaError(provenance + ": empty file, header row expected");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);

  const auto header = text::split_csv(line);
  std::map<std::string, std::size_t, std::less<>> position;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string name(text::trim(header[c]));
    if (!position.emplace(name, c).second)
      throw SchemaError(provenance + ": duplicate column '" + name + "'");
  }
  for (const auto& [name, c] : position) {
    const bool known = FeatureSchema::index_of(name) ||
                       std::find(kKeyColumns.begin(), kKeyColumns.end(), name) != kKeyColumns.end() ||
                       std::find(kLabelColumns.begin(), kLabelColumns.end(), name) !=
                           kLabelColumns.end();
    if (!known) throw SchemaError(provenance + ": unexpected column '" + name + "'");
  }
  auto require = [&](std::string_view name) {
    const auto it = position.find(name);
    if (it == position.end())
      throw SchemaError(provenance + ": missing column '" + std::string(name) + "'");
    return it->second;
  };
  const std::size_t id_col = require("intersection_id");
  const std::size_t approach_col = require("approach");
  const std::size_t interval_col = require("interval_index");
  std::array<std::size_t, FeatureSchema::kSize> feature_cols{};
  for (std::size_t j = 0; j < FeatureSchema::kSize; ++j) feature_cols[j] = require(kNames[j]);

  std::size_t label_count = 0;
  std::array<std::size_t, 3> label_cols{};
  for (std::size_t m = 0; m < 3; ++m) {
    if (const auto it = position.find(kLabelColumns[m]); it != position.end()) {
      label_cols[m] = it->second;
      ++label_count;
    }
  }
  if (label_count != 0 && label_count != 3)
    throw SchemaError(provenance + ": label columns v_LM, v_TM, v_RM must appear together");

  std::vector<Instance> instances;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    const std::string where = provenance + ": line " + std::to_string(line_no);
    std::vector<std::string> cells;
    try {
      cells = text::split_csv(line);
    } catch (const SchemaError& e) {
      throw SchemaError(where + ": " + e.what());
    }
    if (cells.size() != header.size())
      throw SchemaError(where + ": expected " + std::to_string(header.size()) + " cells, found " +
                        std::to_string(cells.size()));

    auto number = [&](std::size_t c, std::string_view name) {
      const auto cell = text::trim(cells[c]);
      if (cell.empty())
        throw SchemaError(where + ", column " + std::string(name) + ": missing value");
      const auto v = text::parse_number(cell);
      if (!v)
        throw SchemaError(where + ", column " + std::string(name) + ": non-numeric cell '" +
                          std::string(cell) + "'");
      return *v;
    };

    Instance inst;
    inst.intersection_id = std::string(text::trim(cells[id_col]));
    if (inst.intersection_id.empty())
      throw SchemaError(where + ", column intersection_id: missing value");
    try {
      inst.approach = parse_approach(cells[approach_col]);
    } catch (const SchemaError& e) {
      throw SchemaError(where + ", column " + e.what());
    }
    const double interval = number(interval_col, "interval_index");
    if (!is_integral(interval) || interval < 0)
      throw DomainError(where + ", column interval_index: expected a non-negative integer");
    inst.interval_index = static_cast<int>(interval);
    for (std::size_t j = 0; j < FeatureSchema::kSize; ++j)
      inst.features[j] = number(feature_cols[j], kNames[j]);
    if (label_count == 3) {
      LabelTriple labels{};
      for (std::size_t m = 0; m < 3; ++m) labels[m] = number(label_cols[m], kLabelColumns[m]);
      inst.labels = labels;
    }
    try {
      validate_instance(inst);
    } catch (const DomainError& e) {
      throw DomainError(where + ", column " + e.what());
    }
    instances.push_back(std::move(inst));
  }
  if (instances.empty()) throw SchemaError(provenance + ": no data rows");
  return Dataset(std::move(instances), std::move(provenance));
}

void write_table(const Dataset& data, std::ostream& out) {
  out << "intersection_id,approach,interval_index";
  for (auto name : kNames) out << ',' << name;
  const bool labeled = data.labeled();
  if (labeled)
    for (auto name : kLabelColumns) out << ',' << name;
  out << '\n';
  for (const auto& inst : data.instances()) {
    out << text::csv_field(inst.intersection_id) << ',' << approach_code(inst.approach) << ','
        << inst.interval_index;
    for (double v : inst.features) out << ',' << text::format_number(v);
    if (labeled)
      for (double v : *inst.labels) out << ',' << text::format_number(v);
    out << '\n';
  }
}

}  // namespace tmcda
