#include "corisk/cohort_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace corisk {
namespace {

std::string join_errors(const std::vector<FieldError>& errors) {
  std::string msg = "invalid record:";
  for (const FieldError& e : errors) msg += " [" + e.field + ": " + e.message + "]";
  return msg;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(std::move(cell));
      cell.clear();
    } else if (c != '\r') {
      cell.push_back(c);
    }
  }
  cells.push_back(std::move(cell));
  return cells;
}

std::optional<double> parse_double(const std::string& text) {
  double v = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::optional<bool> parse_bool(const std::string& text) {
  if (text == "1" || text == "true") return true;
  if (text == "0" || text == "false") return false;
  return std::nullopt;
}

template <std::size_t N>
std::string allowed_set(const std::array<std::string_view, N>& names) {
  std::string out = "{";
  for (std::size_t i = 0; i < N; ++i) {
    if (i) out += ", ";
    out += names[i];
  }
  return out + "}";
}

std::string allowed_devices() {
  std::string out = "{room air";
  for (TherapyLevel level : {TherapyLevel::LFO, TherapyLevel::HFO_NIV, TherapyLevel::MV}) {
    for (auto d : devices_for(level)) out += ", " + std::string(d);
  }
  return out + "}";
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv(const std::filesystem::path& path, const std::vector<std::string>& expected) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw InputError("'" + path.string() + "' is empty");
  table.header = split_csv_line(line);

  std::vector<std::string> missing;
  for (const std::string& col : expected) {
    if (std::find(table.header.begin(), table.header.end(), col) == table.header.end()) {
      missing.push_back(col);
    }
  }
  std::vector<std::string> unknown;
  for (const std::string& col : table.header) {
    if (std::find(expected.begin(), expected.end(), col) == expected.end()) unknown.push_back(col);
  }
  if (!missing.empty() || !unknown.empty()) {
    std::string msg = "'" + path.string() + "' columns do not match the feature vocabulary;";
    if (!missing.empty()) {
      msg += " missing:";
      for (const auto& m : missing) msg += " " + m;
    }
    if (!unknown.empty()) {
      msg += " unknown:";
      for (const auto& u : unknown) msg += " " + u;
    }
    throw SchemaError(msg);
  }

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto cells = split_csv_line(line);
    if (cells.size() != table.header.size()) {
      throw InputError("'" + path.string() + "' line " + std::to_string(line_no) + ": expected " +
                       std::to_string(table.header.size()) + " cells, got " +
                       std::to_string(cells.size()));
    }
    table.rows.push_back(std::move(cells));
  }
  return table;
}

std::map<std::string, std::string> row_map(const CsvTable& t, std::size_t r) {
  std::map<std::string, std::string> m;
  for (std::size_t c = 0; c < t.header.size(); ++c) m[t.header[c]] = t.rows[r][c];
  return m;
}

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& columns,
               const std::vector<std::map<std::string, std::string>>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  for (std::size_t c = 0; c < columns.size(); ++c) out << (c ? "," : "") << columns[c];
  out << '\n';
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < columns.size(); ++c) {
      const auto& v = row.at(columns[c]);
      if (v.find(',') != std::string::npos || v.find('\n') != std::string::npos) {
        throw InputError("value for column '" + columns[c] + "' contains a delimiter");
      }
      out << (c ? "," : "") << v;
    }
    out << '\n';
  }
}

std::string get(const std::map<std::string, std::string>& m, const std::string& key) {
  auto it = m.find(key);
  return it == m.end() ? std::string{} : it->second;
}

}  // namespace

RecordValidationError::RecordValidationError(std::vector<FieldError> errors)
    : InputError(join_errors(errors)), errors_(std::move(errors)) {}

std::string format_real(double v) {
  char buf[40];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::vector<std::string> feature_field_names() {
  std::vector<std::string> names = {"age", "sex", "race", "smoking"};
  for (auto c : kComorbidities) names.emplace_back(c);
  for (auto v : kVitals) names.emplace_back(v);
  for (auto l : kLabs) names.emplace_back(l);
  names.emplace_back("avpu");
  names.emplace_back("presenting_device");
  return names;
}

std::vector<std::string> cohort_columns() {
  std::vector<std::string> cols = {"patient_id",     "site_id",           "visit_time",
                                   "decision_time",  "visit_end_time",    "covid_pcr_ordered",
                                   "covid_pcr_result", "pcr_time"};
  for (auto& f : feature_field_names()) cols.push_back(f);
  cols.emplace_back("image_path");
  return cols;
}

std::vector<std::string> outcome_columns() {
  return {"patient_id", "max_therapy_24h", "max_therapy_72h", "died_24h",
          "died_72h",   "death_time",      "disposition",     "followup_days"};
}

void parse_feature_fields(const std::map<std::string, std::string>& fields, PatientRecord& out,
                          std::vector<FieldError>& errors,
                          const std::vector<std::string>& ignored_keys) {
  const auto names = feature_field_names();
  for (const auto& [key, value] : fields) {
    if (std::find(names.begin(), names.end(), key) == names.end() &&
        std::find(ignored_keys.begin(), ignored_keys.end(), key) == ignored_keys.end()) {
      errors.push_back({key, "unknown field"});
    }
  }

  auto numeric = [&](const std::string& name) -> std::optional<double> {
    const std::string text = get(fields, name);
    if (text.empty()) return std::nullopt;
    const auto v = parse_double(text);
    if (!v) {
      errors.push_back({name, "not a finite number: '" + text + "'"});
      return std::nullopt;
    }
    const auto spec = numeric_field_spec(name);
    if (spec && (*v < spec->lower || *v > spec->upper)) {
      errors.push_back({name, "value " + text + " outside physiologic range [" +
                                  format_real(spec->lower) + ", " + format_real(spec->upper) +
                                  "] " + std::string(spec->unit)});
      return std::nullopt;
    }
    return v;
  };
  auto boolean = [&](const std::string& name) {
    const std::string text = get(fields, name);
    if (text.empty()) return false;
    const auto b = parse_bool(text);
    if (!b) errors.push_back({name, "expected one of {0, 1, true, false}"});
    return b.value_or(false);
  };

  if (auto age = numeric("age")) {
    out.age = *age;
  } else if (get(fields, "age").empty()) {
    errors.push_back({"age", "required"});
  }

  const std::string sex = get(fields, "sex");
  if (sex.empty()) {
    errors.push_back({"sex", "required"});
  } else if (auto s = parse_sex(sex)) {
    out.sex = *s;
  } else {
    errors.push_back({"sex", "unknown value '" + sex + "'; allowed {female, male}"});
  }

  const std::string race = get(fields, "race");
  if (race.empty()) {
    out.race = "unavailable";
  } else if (std::find(kRaces.begin(), kRaces.end(), race) != kRaces.end()) {
    out.race = race;
  } else {
    errors.push_back({"race", "unknown value '" + race + "'; allowed " + allowed_set(kRaces)});
  }

  out.smoking = boolean("smoking");
  for (std::size_t c = 0; c < kComorbidities.size(); ++c) {
    out.comorbidities[c] = boolean(std::string(kComorbidities[c]));
  }
  for (std::size_t v = 0; v < kVitals.size(); ++v) out.vitals[v] = numeric(std::string(kVitals[v]));
  for (std::size_t l = 0; l < kLabs.size(); ++l) out.labs[l] = numeric(std::string(kLabs[l]));

  const std::string avpu = get(fields, "avpu");
  out.avpu.reset();
  if (!avpu.empty()) {
    if (auto a = parse_avpu(avpu)) {
      out.avpu = *a;
    } else {
      errors.push_back({"avpu", "unknown value '" + avpu + "'; allowed {alert, voice, pain, unresponsive}"});
    }
  }

  const std::string device = get(fields, "presenting_device");
  out.presenting_device.reset();
  if (!device.empty()) {
    if (classify_oxygen_device(device)) {
      out.presenting_device = device;
    } else {
      errors.push_back({"presenting_device",
                        "unknown device '" + device + "'; allowed " + allowed_devices()});
    }
  }
}

std::map<std::string, std::string> record_fields(const PatientRecord& r) {
  std::map<std::string, std::string> m;
  m["patient_id"] = r.patient_id;
  m["site_id"] = std::to_string(r.site_id);
  m["visit_time"] = format_timestamp(r.visit_time);
  m["decision_time"] = format_timestamp(r.decision_time);
  m["visit_end_time"] = format_timestamp(r.visit_end_time);
  m["covid_pcr_ordered"] = r.covid_pcr_ordered ? "1" : "0";
  m["covid_pcr_result"] = r.covid_pcr_result ? std::string(to_string(*r.covid_pcr_result)) : "";
  m["pcr_time"] = r.pcr_time ? format_timestamp(*r.pcr_time) : "";
  m["age"] = format_real(r.age);
  m["sex"] = std::string(to_string(r.sex));
  m["race"] = r.race;
  m["smoking"] = r.smoking ? "1" : "0";
  for (std::size_t c = 0; c < kComorbidities.size(); ++c) {
    m[std::string(kComorbidities[c])] = r.comorbidities[c] ? "1" : "0";
  }
  for (std::size_t v = 0; v < kVitals.size(); ++v) {
    m[std::string(kVitals[v])] = r.vitals[v] ? format_real(*r.vitals[v]) : "";
  }
  for (std::size_t l = 0; l < kLabs.size(); ++l) {
    m[std::string(kLabs[l])] = r.labs[l] ? format_real(*r.labs[l]) : "";
  }
  m["avpu"] = r.avpu ? std::string(to_string(*r.avpu)) : "";
  m["presenting_device"] = r.presenting_device.value_or("");
  m["image_path"] = r.image_path.value_or("");
  return m;
}

void write_cohort(const Cohort& cohort, const std::filesystem::path& cohort_csv,
                  const std::filesystem::path& outcomes_csv) {
  const auto image_root = cohort_csv.parent_path();
  std::vector<std::map<std::string, std::string>> record_rows;
  std::vector<std::map<std::string, std::string>> outcome_rows;
  for (const CohortEntry& e : cohort) {
    record_rows.push_back(record_fields(e.record));
    if (e.image && e.record.image_path) {
      const auto path = image_root / *e.record.image_path;
      std::filesystem::create_directories(path.parent_path());
      write_pgm(path, *e.image);
    }
    const OutcomeRecord& o = e.outcome;
    outcome_rows.push_back({{"patient_id", o.patient_id},
                            {"max_therapy_24h", std::string(to_string(o.max_therapy_24h))},
                            {"max_therapy_72h", std::string(to_string(o.max_therapy_72h))},
                            {"died_24h", o.died_24h ? "1" : "0"},
                            {"died_72h", o.died_72h ? "1" : "0"},
                            {"death_time", o.death_time ? format_timestamp(*o.death_time) : ""},
                            {"disposition", std::string(to_string(o.disposition))},
                            {"followup_days", format_real(o.followup_days)}});
  }
  write_csv(cohort_csv, cohort_columns(), record_rows);
  write_csv(outcomes_csv, outcome_columns(), outcome_rows);
}

std::vector<PatientRecord> read_patient_records(const std::filesystem::path& cohort_csv) {
  const CsvTable table = read_csv(cohort_csv, cohort_columns());
  std::vector<PatientRecord> records;
  records.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto m = row_map(table, r);
    PatientRecord rec;
    std::vector<FieldError> errors;
    rec.patient_id = m.at("patient_id");
    if (rec.patient_id.empty()) errors.push_back({"patient_id", "required"});
    if (auto site = parse_double(m.at("site_id")); site && *site == std::floor(*site)) {
      rec.site_id = static_cast<int>(*site);
    } else {
      errors.push_back({"site_id", "expected an integer"});
    }
    auto timestamp = [&](const std::string& col) -> std::optional<Timestamp> {
      const std::string& text = m.at(col);
      if (text.empty()) return std::nullopt;
      try {
        return parse_timestamp(text);
      } catch (const InputError& e) {
        errors.push_back({col, e.what()});
        return std::nullopt;
      }
    };
    for (const char* col : {"visit_time", "decision_time", "visit_end_time"}) {
      auto t = timestamp(col);
      if (!t && m.at(col).empty()) errors.push_back({col, "required"});
      Timestamp& target = std::string_view(col) == "visit_time"      ? rec.visit_time
                          : std::string_view(col) == "decision_time" ? rec.decision_time
                                                                     : rec.visit_end_time;
      if (t) target = *t;
    }
    if (auto b = parse_bool(m.at("covid_pcr_ordered"))) {
      rec.covid_pcr_ordered = *b;
    } else {
      errors.push_back({"covid_pcr_ordered", "expected 0 or 1"});
    }
    if (const auto& text = m.at("covid_pcr_result"); !text.empty()) {
      if (auto res = parse_pcr_result(text)) {
        rec.covid_pcr_result = *res;
      } else {
        errors.push_back({"covid_pcr_result", "unknown value '" + text + "'; allowed {negative, positive}"});
      }
    }
    rec.pcr_time = timestamp("pcr_time");
    if (const auto& path = m.at("image_path"); !path.empty()) rec.image_path = path;

    std::map<std::string, std::string> features;
    for (const auto& name : feature_field_names()) features[name] = m.at(name);
    parse_feature_fields(features, rec, errors);
    if (!errors.empty()) {
      for (FieldError& e : errors) e.field = rec.patient_id + "." + e.field;
      throw RecordValidationError(std::move(errors));
    }
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<OutcomeRecord> read_outcomes(const std::filesystem::path& outcomes_csv) {
  const CsvTable table = read_csv(outcomes_csv, outcome_columns());
  std::vector<OutcomeRecord> outcomes;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto m = row_map(table, r);
    OutcomeRecord o;
    o.patient_id = m.at("patient_id");
    const std::string where = "'" + outcomes_csv.string() + "' patient " + o.patient_id + ": ";
    auto level = [&](const std::string& col) {
      auto l = parse_therapy_level(m.at(col));
      if (!l) throw InputError(where + "bad " + col + " '" + m.at(col) + "'");
      return *l;
    };
    auto flag = [&](const std::string& col) {
      auto b = parse_bool(m.at(col));
      if (!b) throw InputError(where + "bad " + col);
      return *b;
    };
    o.max_therapy_24h = level("max_therapy_24h");
    o.max_therapy_72h = level("max_therapy_72h");
    o.died_24h = flag("died_24h");
    o.died_72h = flag("died_72h");
    if (o.died_24h && !o.died_72h) throw InputError(where + "died_24h without died_72h");
    if (!m.at("death_time").empty()) o.death_time = parse_timestamp(m.at("death_time"));
    auto disp = parse_disposition(m.at("disposition"));
    if (!disp) throw InputError(where + "bad disposition '" + m.at("disposition") + "'");
    o.disposition = *disp;
    auto follow = parse_double(m.at("followup_days"));
    if (!follow || *follow < 0.0) throw InputError(where + "bad followup_days");
    o.followup_days = *follow;
    outcomes.push_back(std::move(o));
  }
  return outcomes;
}

Cohort read_cohort(const std::filesystem::path& cohort_csv,
                   const std::filesystem::path& outcomes_csv,
                   const std::filesystem::path& image_root) {
  auto records = read_patient_records(cohort_csv);
  auto outcomes = read_outcomes(outcomes_csv);
  std::unordered_map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < outcomes.size(); ++i) by_id[outcomes[i].patient_id] = i;
  Cohort cohort;
  cohort.reserve(records.size());
  for (auto& rec : records) {
    auto it = by_id.find(rec.patient_id);
    if (it == by_id.end()) throw InputError("no outcome for patient " + rec.patient_id);
    CohortEntry e;
    e.outcome = outcomes[it->second];
    if (rec.image_path) e.image = read_pgm(image_root / *rec.image_path);
    e.record = std::move(rec);
    cohort.push_back(std::move(e));
  }
  return cohort;
}

}  // namespace corisk
