// CSV ingestion and validation for the two dataset layouts: the
// one-line-per-subject semi-competing-risks table and the survival +
// repeated-measurements pair for a longitudinal surrogate.
//
// Ids are remapped to contiguous 1..N / 1..K at load (the original values
// are kept for reporting); categorical covariate columns are expanded to
// reference-coded indicators with the alphabetically first level as
// reference.  All times are multiplied by `time_scale` on load, exactly,
// with no unit inference.
#pragma once

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "surroval/common.hpp"

namespace surroval {

struct SubjectRecord {
  int patient_id = 0;  // contiguous 1..N
  int trial_id = 0;    // contiguous 1..K
  int trt = 0;
  double time_s = 0.0;
  int status_s = 0;
  double time_t = 0.0;
  int status_t = 0;
  std::vector<double> covariates;
};

struct SurrogacyDataset {
  std::vector<SubjectRecord> subjects;
  int n_trials = 0;
  double time_scale = 1.0;
  std::vector<std::string> covariate_names;
  std::vector<long long> original_patient_ids;  // index = new id - 1
  std::vector<long long> original_trial_ids;
};

struct LongiSurvivalRow {
  int id = 0;  // contiguous 1..N
  double time_t = 0.0;
  int status_t = 0;
  int trt = 0;
  int center_id = 1;  // contiguous 1..K (1 when the file has no center column)
  std::vector<double> covariates;
};

struct LongiMeasurementRow {
  int id = 0;
  double timevar = 0.0;
  double value = 0.0;
  std::vector<double> covariates;
};

struct LongitudinalDataset {
  std::vector<LongiSurvivalRow> survival;        // sorted by id
  std::vector<LongiMeasurementRow> measurements; // sorted by (id, timevar)
  bool has_centers = false;
  int n_centers = 1;
  std::vector<std::string> surv_covariate_names;
  std::vector<std::string> longi_covariate_names;
  std::vector<long long> original_ids;
  std::vector<long long> original_center_ids;
};

// ---------------------------------------------------------------------------
// Small CSV reader: comma separated, header row mandatory, no quoting.
// ---------------------------------------------------------------------------

namespace detail {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  }
};

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open file: " + path);
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (first && line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') cells.push_back("");
    if (first) {
      t.header = cells;
      first = false;
    } else {
      if (line.empty()) continue;
      cells.resize(t.header.size());
      t.rows.push_back(std::move(cells));
    }
  }
  if (first) throw Error("empty file: " + path);
  return t;
}

inline double parse_double(const std::string& s, std::size_t row,
                           const std::string& col) {
  if (s.empty())
    throw NonNumericCell("missing value at row " + std::to_string(row + 1) +
                         ", column " + col);
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end == nullptr || *end != '\0' || end == s.c_str())
    throw NonNumericCell("non-numeric value '" + s + "' at row " +
                         std::to_string(row + 1) + ", column " + col);
  return v;
}

inline long long parse_int(const std::string& s, std::size_t row,
                           const std::string& col) {
  double v = parse_double(s, row, col);
  long long i = static_cast<long long>(v);
  if (static_cast<double>(i) != v)
    throw NonNumericCell("expected integer, got '" + s + "' at row " +
                         std::to_string(row + 1) + ", column " + col);
  return i;
}

inline bool column_is_numeric(const CsvTable& t, int col) {
  for (const auto& r : t.rows) {
    const std::string& s = r[static_cast<std::size_t>(col)];
    if (s.empty()) return false;
    char* end = nullptr;
    std::strtod(s.c_str(), &end);
    if (end == nullptr || *end != '\0' || end == s.c_str()) return false;
  }
  return true;
}

// Expands the extra columns of `t` (all columns not in `reserved`) into a
// numeric covariate matrix.  Text columns become reference-coded indicators.
inline void expand_covariates(const CsvTable& t,
                              const std::set<std::string>& reserved,
                              std::vector<std::string>& names,
                              std::vector<std::vector<double>>& values) {
  names.clear();
  values.assign(t.rows.size(), {});
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    const std::string& col = t.header[c];
    if (reserved.count(col)) continue;
    if (column_is_numeric(t, static_cast<int>(c))) {
      names.push_back(col);
      for (std::size_t r = 0; r < t.rows.size(); ++r)
        values[r].push_back(parse_double(t.rows[r][c], r, col));
    } else {
      std::set<std::string> levels;
      for (const auto& row : t.rows) levels.insert(row[c]);
      bool first = true;
      for (const auto& level : levels) {  // std::set: alphabetical order
        if (first) {  // reference level
          first = false;
          continue;
        }
        names.push_back(col + "=" + level);
        for (std::size_t r = 0; r < t.rows.size(); ++r)
          values[r].push_back(t.rows[r][c] == level ? 1.0 : 0.0);
      }
    }
  }
}

inline std::string fmt_full(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Time-to-event surrogate dataset
// ---------------------------------------------------------------------------

inline SurrogacyDataset load_tte_dataset(const std::string& path,
                                         double time_scale = 1.0) {
  if (!(time_scale > 0.0)) throw Error("time_scale must be positive");
  detail::CsvTable t = detail::read_csv(path);
  const char* required[] = {"patientID", "trialID", "trt",    "timeS",
                            "statusS",   "timeT",   "statusT"};
  for (const char* name : required)
    if (t.column(name) < 0) throw MissingColumn(name);
  int c_pid = t.column("patientID"), c_tid = t.column("trialID"),
      c_trt = t.column("trt"), c_ts = t.column("timeS"),
      c_ss = t.column("statusS"), c_tt = t.column("timeT"),
      c_st = t.column("statusT");

  SurrogacyDataset ds;
  ds.time_scale = time_scale;
  std::set<std::string> reserved(std::begin(required), std::end(required));
  std::vector<std::vector<double>> cov;
  detail::expand_covariates(t, reserved, ds.covariate_names, cov);

  std::vector<long long> raw_pid(t.rows.size()), raw_tid(t.rows.size());
  ds.subjects.resize(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    SubjectRecord& s = ds.subjects[r];
    raw_pid[r] = detail::parse_int(t.rows[r][c_pid], r, "patientID");
    raw_tid[r] = detail::parse_int(t.rows[r][c_tid], r, "trialID");
    long long trt = detail::parse_int(t.rows[r][c_trt], r, "trt");
    s.time_s = detail::parse_double(t.rows[r][c_ts], r, "timeS") * time_scale;
    long long ss = detail::parse_int(t.rows[r][c_ss], r, "statusS");
    s.time_t = detail::parse_double(t.rows[r][c_tt], r, "timeT") * time_scale;
    long long st = detail::parse_int(t.rows[r][c_st], r, "statusT");
    if (trt != 0 && trt != 1)
      throw InvariantViolation("trt must be 0/1 at row " + std::to_string(r + 2));
    if (ss != 0 && ss != 1)
      throw InvariantViolation("statusS must be 0/1 at row " + std::to_string(r + 2));
    if (st != 0 && st != 1)
      throw InvariantViolation("statusT must be 0/1 at row " + std::to_string(r + 2));
    s.trt = static_cast<int>(trt);
    s.status_s = static_cast<int>(ss);
    s.status_t = static_cast<int>(st);
    if (!(s.time_s > 0.0) || !(s.time_t > 0.0))
      throw InvariantViolation("nonpositive follow-up time at row " +
                               std::to_string(r + 2) +
                               " (hazard models are undefined at zero duration)");
    if (s.time_s > s.time_t)
      throw InvariantViolation(
          "timeS > timeT at row " + std::to_string(r + 2) +
          " (the surrogate follow-up cannot exceed the final follow-up)");
    s.covariates = cov[r];
  }
  if (ds.subjects.empty()) throw InvariantViolation("dataset has no rows");

  // remap ids to contiguous 1..N / 1..K.  Patients are keyed by the
  // (trial, patient) pair because some meta-analytic files restart the
  // patient numbering within each trial.
  std::map<std::pair<long long, long long>, int> pid_map;
  std::map<long long, int> tid_map;
  for (std::size_t r = 0; r < raw_pid.size(); ++r) {
    auto [it, inserted] = pid_map.emplace(std::make_pair(raw_tid[r], raw_pid[r]), 0);
    if (!inserted)
      throw InvariantViolation("duplicate (trialID, patientID) pair at row " +
                               std::to_string(r + 2));
    tid_map.emplace(raw_tid[r], 0);
  }
  {
    int next = 1;
    for (auto& kv : pid_map) kv.second = next++;
    next = 1;
    for (auto& kv : tid_map) kv.second = next++;
  }
  ds.original_patient_ids.resize(pid_map.size());
  for (auto& kv : pid_map) ds.original_patient_ids[kv.second - 1] = kv.first.second;
  ds.original_trial_ids.resize(tid_map.size());
  for (auto& kv : tid_map) ds.original_trial_ids[kv.second - 1] = kv.first;
  for (std::size_t r = 0; r < ds.subjects.size(); ++r) {
    ds.subjects[r].patient_id = pid_map[{raw_tid[r], raw_pid[r]}];
    ds.subjects[r].trial_id = tid_map[raw_tid[r]];
  }
  ds.n_trials = static_cast<int>(tid_map.size());

  bool has0 = false, has1 = false;
  for (const auto& s : ds.subjects) (s.trt == 0 ? has0 : has1) = true;
  if (!has0 || !has1)
    throw InvariantViolation("both treatment arms must be present");
  return ds;
}

// Composite-endpoint recoding: a surrogate event recorded at the exact time
// of death is censored (the "event" was the death itself).  Idempotent.
inline SurrogacyDataset recode_composite(SurrogacyDataset ds) {
  for (auto& s : ds.subjects)
    if (s.status_s == 1 && s.time_s == s.time_t) s.status_s = 0;
  return ds;
}

inline void save_tte_dataset(const SurrogacyDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write file: " + path);
  out << "patientID,trialID,trt,timeS,statusS,timeT,statusT";
  for (const auto& n : ds.covariate_names) out << "," << n;
  out << "\n";
  for (const auto& s : ds.subjects) {
    out << ds.original_patient_ids.at(s.patient_id - 1) << ","
        << ds.original_trial_ids.at(s.trial_id - 1) << "," << s.trt << ","
        << detail::fmt_full(s.time_s) << "," << s.status_s << ","
        << detail::fmt_full(s.time_t) << "," << s.status_t;
    for (double c : s.covariates) out << "," << detail::fmt_full(c);
    out << "\n";
  }
}

// ---------------------------------------------------------------------------
// Longitudinal surrogate dataset (survival table + repeated measurements)
// ---------------------------------------------------------------------------

inline LongitudinalDataset load_longitudinal(const std::string& path_surv,
                                             const std::string& path_longi) {
  detail::CsvTable ts = detail::read_csv(path_surv);
  detail::CsvTable tl = detail::read_csv(path_longi);
  for (const char* name : {"id", "time", "status", "trt"})
    if (ts.column(name) < 0) throw MissingColumn(name);
  for (const char* name : {"id", "timevar", "value"})
    if (tl.column(name) < 0) throw MissingColumn(name);

  LongitudinalDataset ds;
  ds.has_centers = ts.column("center") >= 0;

  std::set<std::string> surv_reserved = {"id", "time", "status", "trt", "center"};
  std::vector<std::vector<double>> scov;
  detail::expand_covariates(ts, surv_reserved, ds.surv_covariate_names, scov);
  std::set<std::string> longi_reserved = {"id", "timevar", "value"};
  std::vector<std::vector<double>> lcov;
  detail::expand_covariates(tl, longi_reserved, ds.longi_covariate_names, lcov);

  int c_id = ts.column("id"), c_time = ts.column("time"),
      c_status = ts.column("status"), c_trt = ts.column("trt"),
      c_center = ts.column("center");
  std::vector<long long> raw_id(ts.rows.size());
  std::vector<long long> raw_center(ts.rows.size(), 1);
  ds.survival.resize(ts.rows.size());
  for (std::size_t r = 0; r < ts.rows.size(); ++r) {
    LongiSurvivalRow& s = ds.survival[r];
    raw_id[r] = detail::parse_int(ts.rows[r][c_id], r, "id");
    s.time_t = detail::parse_double(ts.rows[r][c_time], r, "time");
    s.status_t = static_cast<int>(detail::parse_int(ts.rows[r][c_status], r, "status"));
    s.trt = static_cast<int>(detail::parse_int(ts.rows[r][c_trt], r, "trt"));
    if (ds.has_centers)
      raw_center[r] = detail::parse_int(ts.rows[r][c_center], r, "center");
    if (s.status_t != 0 && s.status_t != 1)
      throw InvariantViolation("status must be 0/1 at row " + std::to_string(r + 2));
    if (s.trt != 0 && s.trt != 1)
      throw InvariantViolation("trt must be 0/1 at row " + std::to_string(r + 2));
    if (!(s.time_t > 0.0))
      throw InvariantViolation("nonpositive follow-up time at row " +
                               std::to_string(r + 2));
    s.covariates = scov[r];
  }
  if (ds.survival.empty()) throw InvariantViolation("survival table has no rows");

  std::map<long long, int> id_map;
  for (long long v : raw_id) {
    auto [it, inserted] = id_map.emplace(v, 0);
    if (!inserted)
      throw DuplicateSurvivalRow("id " + std::to_string(v) +
                                 " appears more than once in the survival table");
  }
  int next = 1;
  for (auto& kv : id_map) kv.second = next++;
  ds.original_ids.resize(id_map.size());
  for (auto& kv : id_map) ds.original_ids[kv.second - 1] = kv.first;
  std::map<long long, int> center_map;
  for (long long v : raw_center) center_map.emplace(v, 0);
  next = 1;
  for (auto& kv : center_map) kv.second = next++;
  ds.original_center_ids.resize(center_map.size());
  for (auto& kv : center_map) ds.original_center_ids[kv.second - 1] = kv.first;
  ds.n_centers = static_cast<int>(center_map.size());
  for (std::size_t r = 0; r < ds.survival.size(); ++r) {
    ds.survival[r].id = id_map[raw_id[r]];
    ds.survival[r].center_id = center_map[raw_center[r]];
  }
  std::sort(ds.survival.begin(), ds.survival.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });

  int m_id = tl.column("id"), m_tv = tl.column("timevar"), m_v = tl.column("value");
  ds.measurements.resize(tl.rows.size());
  for (std::size_t r = 0; r < tl.rows.size(); ++r) {
    LongiMeasurementRow& m = ds.measurements[r];
    long long id = detail::parse_int(tl.rows[r][m_id], r, "id");
    auto it = id_map.find(id);
    if (it == id_map.end())
      throw OrphanMeasurement("measurement row " + std::to_string(r + 2) +
                              " refers to id " + std::to_string(id) +
                              " absent from the survival table");
    m.id = it->second;
    m.timevar = detail::parse_double(tl.rows[r][m_tv], r, "timevar");
    m.value = detail::parse_double(tl.rows[r][m_v], r, "value");
    if (m.timevar < 0.0)
      throw InvariantViolation("negative measurement time at row " +
                               std::to_string(r + 2));
    m.covariates = lcov[r];
  }
  if (ds.measurements.empty())
    throw InvariantViolation("the model needs at least one repeated measurement");
  std::vector<double> tmax(ds.survival.size());
  for (const auto& s : ds.survival) tmax[static_cast<std::size_t>(s.id - 1)] = s.time_t;
  for (std::size_t r = 0; r < ds.measurements.size(); ++r) {
    const auto& m = ds.measurements[r];
    if (m.timevar > tmax[static_cast<std::size_t>(m.id - 1)] + 1e-12)
      throw InvariantViolation(
          "measurement time exceeds the subject's follow-up time (id " +
          std::to_string(ds.original_ids[static_cast<std::size_t>(m.id - 1)]) + ")");
  }
  std::stable_sort(ds.measurements.begin(), ds.measurements.end(),
                   [](const auto& a, const auto& b) {
                     return a.id != b.id ? a.id < b.id : a.timevar < b.timevar;
                   });
  return ds;
}

inline void save_longitudinal(const LongitudinalDataset& ds,
                              const std::string& path_surv,
                              const std::string& path_longi) {
  {
    std::ofstream out(path_surv);
    if (!out) throw Error("cannot write file: " + path_surv);
    out << "id,time,status,trt";
    if (ds.has_centers) out << ",center";
    for (const auto& n : ds.surv_covariate_names) out << "," << n;
    out << "\n";
    for (const auto& s : ds.survival) {
      out << ds.original_ids.at(s.id - 1) << "," << detail::fmt_full(s.time_t)
          << "," << s.status_t << "," << s.trt;
      if (ds.has_centers) out << "," << ds.original_center_ids.at(s.center_id - 1);
      for (double c : s.covariates) out << "," << detail::fmt_full(c);
      out << "\n";
    }
  }
  {
    std::ofstream out(path_longi);
    if (!out) throw Error("cannot write file: " + path_longi);
    out << "id,timevar,value";
    for (const auto& n : ds.longi_covariate_names) out << "," << n;
    out << "\n";
    for (const auto& m : ds.measurements) {
      out << ds.original_ids.at(m.id - 1) << "," << detail::fmt_full(m.timevar)
          << "," << detail::fmt_full(m.value);
      for (double c : m.covariates) out << "," << detail::fmt_full(c);
      out << "\n";
    }
  }
}

}  // namespace surroval
