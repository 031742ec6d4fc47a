#include "qtraj/io.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <mutex>
#include <set>
#include <sstream>

#include <json.hpp>

#include "qtraj/parallel.hpp"

namespace qtraj {
namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// ---------------------------------------------------------------------------
// Strict JSON reading

void check_keys(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
  if (!obj.is_object()) fail(ErrorKind::configuration, where + " must be an object");
  for (const auto& [key, _] : obj.items())
    if (!allowed.count(key)) fail(ErrorKind::configuration, "unknown key '" + (where.empty() ? key : where + "." + key) + "'");
}

double get_number(const json& obj, const std::string& key, const std::string& where, double fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number()) fail(ErrorKind::configuration, where + "." + key + " must be a number");
  return v.get<double>();
}

long long get_integer(const json& obj, const std::string& key, const std::string& where, long long fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number_integer()) fail(ErrorKind::configuration, where + "." + key + " must be an integer");
  return v.get<long long>();
}

std::string get_string(const json& obj, const std::string& key, const std::string& where, const std::string& fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_string()) fail(ErrorKind::configuration, where + "." + key + " must be a string");
  return v.get<std::string>();
}

bool get_bool(const json& obj, const std::string& key, const std::string& where, bool fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_boolean()) fail(ErrorKind::configuration, where + "." + key + " must be true or false");
  return v.get<bool>();
}

UnitParams parse_unit(const json& j, const std::string& where) {
  check_keys(j, where, {"gamma01", "gamma12", "g", "delta1", "delta2", "E", "kappa", "phi"});
  UnitParams u;
  u.gamma01 = get_number(j, "gamma01", where, u.gamma01);
  u.gamma12 = get_number(j, "gamma12", where, u.gamma12);
  u.g = get_number(j, "g", where, u.g);
  u.delta1 = get_number(j, "delta1", where, u.delta1);
  u.delta2 = get_number(j, "delta2", where, u.delta2);
  u.E = get_number(j, "E", where, u.E);
  u.kappa = get_number(j, "kappa", where, u.kappa);
  u.phi = get_number(j, "phi", where, u.phi);
  return u;
}

EnsembleConfig config_from(const json& root) {
  check_keys(root, "", {"format_version", "units", "source", "grid", "truncation", "ensemble", "filter", "outputs"});
  EnsembleConfig c;
  c.workers = default_workers();
  if (root.contains("format_version") && root.at("format_version") != kFormatVersion)
    fail(ErrorKind::configuration, "unsupported format_version");
  if (root.contains("units")) {
    const json& units = root.at("units");
    if (!units.is_array() || units.empty() || units.size() > 2)
      fail(ErrorKind::configuration, "units must be a list of 1 or 2 unit objects");
    c.units.clear();
    for (std::size_t i = 0; i < units.size(); ++i) c.units.push_back(parse_unit(units[i], "units[" + std::to_string(i) + "]"));
  }
  if (root.contains("source")) {
    const json& s = root.at("source");
    check_keys(s, "source", {"gamma_c", "initial"});
    c.source.gamma_c = get_number(s, "gamma_c", "source", c.source.gamma_c);
    c.source.initial = source_initial_from_string(get_string(s, "initial", "source", to_string(c.source.initial)));
  }
  if (root.contains("grid")) {
    const json& g = root.at("grid");
    check_keys(g, "grid", {"t0", "T", "dt"});
    c.grid.t0 = get_number(g, "t0", "grid", c.grid.t0);
    c.grid.T = get_number(g, "T", "grid", c.grid.T);
    c.grid.dt = get_number(g, "dt", "grid", c.grid.dt);
  }
  if (root.contains("truncation")) {
    const json& t = root.at("truncation");
    check_keys(t, "truncation", {"d_cavity", "top_level_tolerance"});
    c.truncation.d_cavity = static_cast<int>(get_integer(t, "d_cavity", "truncation", c.truncation.d_cavity));
    c.truncation.top_level_tolerance = get_number(t, "top_level_tolerance", "truncation", c.truncation.top_level_tolerance);
  }
  if (root.contains("ensemble")) {
    const json& e = root.at("ensemble");
    check_keys(e, "ensemble", {"n_traj", "master_seed", "parallelism", "retention", "retain_per_hypothesis"});
    c.n_traj = static_cast<int>(get_integer(e, "n_traj", "ensemble", c.n_traj));
    if (e.contains("master_seed")) {
      const json& s = e.at("master_seed");
      if (!s.is_number_integer() || (s.is_number_integer() && !s.is_number_unsigned() && s.get<long long>() < 0))
        fail(ErrorKind::configuration, "ensemble.master_seed must be a non-negative 64-bit integer");
      c.master_seed = s.get<std::uint64_t>();
    }
    c.workers = static_cast<int>(get_integer(e, "parallelism", "ensemble", c.workers));
    c.retention = retention_from_string(get_string(e, "retention", "ensemble", to_string(c.retention)));
    c.retain_per_hypothesis = static_cast<int>(get_integer(e, "retain_per_hypothesis", "ensemble", c.retain_per_hypothesis));
  }
  if (root.contains("filter")) {
    const json& f = root.at("filter");
    check_keys(f, "filter", {"kernel", "kernel_estimator_M", "kernel_smoothing", "hypothesis_test", "hypothesis_stride"});
    c.kernel = kernel_variant_from_string(get_string(f, "kernel", "filter", to_string(c.kernel)));
    c.kernel_estimator_M = static_cast<int>(get_integer(f, "kernel_estimator_M", "filter", c.kernel_estimator_M));
    c.kernel_smoothing = static_cast<int>(get_integer(f, "kernel_smoothing", "filter", c.kernel_smoothing));
    c.hypothesis_test = get_bool(f, "hypothesis_test", "filter", c.hypothesis_test);
    c.hypothesis_stride = static_cast<int>(get_integer(f, "hypothesis_stride", "filter", c.hypothesis_stride));
  }
  if (root.contains("outputs")) {
    const json& o = root.at("outputs");
    check_keys(o, "outputs", {"directory"});
    c.output_dir = get_string(o, "directory", "outputs", c.output_dir);
  }
  c.validate();
  return c;
}

json config_json(const EnsembleConfig& c, bool deterministic) {
  json j;
  j["format_version"] = kFormatVersion;
  j["units"] = json::array();
  for (const auto& u : c.units)
    j["units"].push_back({{"gamma01", u.gamma01}, {"gamma12", u.gamma12}, {"g", u.g}, {"delta1", u.delta1},
                          {"delta2", u.delta2}, {"E", u.E}, {"kappa", u.kappa}, {"phi", u.phi}});
  j["source"] = {{"gamma_c", c.source.gamma_c}, {"initial", to_string(c.source.initial)}};
  j["grid"] = {{"t0", c.grid.t0}, {"T", c.grid.T}, {"dt", c.grid.dt}};
  j["truncation"] = {{"d_cavity", c.truncation.d_cavity}, {"top_level_tolerance", c.truncation.top_level_tolerance}};
  j["ensemble"] = {{"n_traj", c.n_traj}, {"master_seed", c.master_seed}};
  if (!deterministic) j["ensemble"]["parallelism"] = c.workers;
  j["ensemble"]["retention"] = to_string(c.retention);
  j["ensemble"]["retain_per_hypothesis"] = c.retain_per_hypothesis;
  j["filter"] = {{"kernel", to_string(c.kernel)},
                 {"kernel_estimator_M", c.kernel_estimator_M},
                 {"kernel_smoothing", c.kernel_smoothing},
                 {"hypothesis_test", c.hypothesis_test},
                 {"hypothesis_stride", c.hypothesis_stride}};
  if (!deterministic) j["outputs"] = {{"directory", c.output_dir}};
  return j;
}

// NaN has no JSON literal; it travels as null.
json number_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }
double number_from(const json& j) { return j.is_null() ? kNaN : j.get<double>(); }

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  out << text;
  out.flush();
  if (!out) fail(ErrorKind::io, "write failed for " + path.string());
}

json parse_json(const std::string& text, const std::string& what, ErrorKind kind) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    fail(kind, what + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// CSV

const std::string kVersionLine = "# format_version=" + std::to_string(kFormatVersion);

std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s) {
  if (s.empty()) return kNaN;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') fail(ErrorKind::io, "malformed number '" + s + "'");
  return v;
}

std::uint64_t parse_u64(const std::string& s) {
  char* end = nullptr;
  const auto v = std::strtoull(s.c_str(), &end, 10);
  if (s.empty() || *end != '\0') fail(ErrorKind::io, "malformed integer '" + s + "'");
  return v;
}

// Comment lines after the version line as key=value pairs, then the header and
// data rows.
struct CsvFile {
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string get(const std::string& key) const {
    for (const auto& [k, v] : meta)
      if (k == key) return v;
    fail(ErrorKind::io, "missing '" + key + "' metadata");
  }
};

CsvFile read_csv(const fs::path& path, const std::vector<std::string>& expected_prefix) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot read " + path.string());
  CsvFile f;
  std::string line;
  if (!std::getline(in, line) || line != kVersionLine)
    fail(ErrorKind::io, path.string() + ": unsupported or missing format version (expected '" + kVersionLine + "')");
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] == '#') {
      std::istringstream ss(line.substr(1));
      std::string tok;
      while (ss >> tok) {
        const auto eq = tok.find('=');
        if (eq != std::string::npos) f.meta.emplace_back(tok.substr(0, eq), tok.substr(eq + 1));
      }
      continue;
    }
    f.header = split(line);
    break;
  }
  for (std::size_t i = 0; i < expected_prefix.size(); ++i)
    if (i >= f.header.size() || f.header[i] != expected_prefix[i])
      fail(ErrorKind::io, path.string() + ": unexpected CSV header");
  while (std::getline(in, line))
    if (!line.empty()) {
      f.rows.push_back(split(line));
      if (f.rows.back().size() != f.header.size()) fail(ErrorKind::io, path.string() + ": ragged CSV row");
    }
  return f;
}

std::string grid_meta(const TimeGrid& g) {
  return "# grid t0=" + format_double(g.t0) + " T=" + format_double(g.T) + " dt=" + format_double(g.dt) + "\n";
}

TimeGrid grid_from(const CsvFile& f) {
  TimeGrid g;
  g.t0 = parse_double(f.get("t0"));
  g.T = parse_double(f.get("T"));
  g.dt = parse_double(f.get("dt"));
  return g;
}

}  // namespace

std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

// ---------------------------------------------------------------------------
// Config

EnsembleConfig parse_config(const std::string& json_text) {
  return config_from(parse_json(json_text, "config is not valid JSON", ErrorKind::configuration));
}

EnsembleConfig load_config(const fs::path& path) { return parse_config(read_file(path)); }

std::string config_to_json(const EnsembleConfig& config, bool deterministic) {
  return config_json(config, deterministic).dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Report

void write_report_json(const EnsembleReport& r, const fs::path& path) {
  json j;
  j["format_version"] = kFormatVersion;
  j["config"] = config_json(r.config, true);
  const auto energy = r.kernel.energy();
  j["kernel"] = {{"labels", r.kernel.labels}, {"orientation", r.kernel.orientation}, {"energy", energy}};
  const DecisionStats& s = r.stats;
  j["statistics"] = {{"snr", number_or_null(s.snr)},
                     {"snr_signed", number_or_null(s.snr_signed)},
                     {"S_th", number_or_null(s.S_th)},
                     {"F", number_or_null(s.F)},
                     {"n0", s.S0_samples.size()},
                     {"n1", s.S1_samples.size()},
                     {"histogram", {{"edges", s.histogram.edges}, {"count_n0", s.histogram.count0}, {"count_n1", s.histogram.count1}}}};
  j["used"] = r.used;
  j["flagged"] = r.flagged;
  if (r.config.hypothesis_test)
    j["hypothesis_filter"] = {{"accuracy", number_or_null(r.hypothesis_accuracy)},
                              {"standard_error", number_or_null(r.hypothesis_accuracy_se)}};
  json rows = json::array();
  for (const auto& row : r.rows) {
    json S = json::array();
    for (double x : row.S) S.push_back(number_or_null(x));
    json o = {{"id", row.id},     {"hypothesis", row.hypothesis}, {"seed", row.seed},       {"S", S},
              {"S_AB", number_or_null(row.S_AB)}, {"jumps", row.jumps}, {"flagged", row.flagged}};
    if (row.flagged) o["flag_reason"] = row.flag_reason;
    if (r.config.hypothesis_test) o["posterior"] = number_or_null(row.posterior);
    rows.push_back(std::move(o));
  }
  j["trajectories"] = std::move(rows);
  write_file(path, j.dump(1) + "\n");
}

EnsembleReport read_report_json(const fs::path& path) {
  const json j = parse_json(read_file(path), path.string(), ErrorKind::io);
  if (!j.contains("format_version") || j.at("format_version") != kFormatVersion)
    fail(ErrorKind::io, path.string() + ": unsupported or missing format_version");
  EnsembleReport r;
  try {
    r.config = config_from(j.at("config"));
    const json& k = j.at("kernel");
    r.kernel.grid = r.config.grid;
    r.kernel.labels = k.at("labels").get<std::vector<std::string>>();
    r.kernel.orientation = k.at("orientation").get<std::vector<int>>();
    const json& s = j.at("statistics");
    r.stats.snr = number_from(s.at("snr"));
    r.stats.snr_signed = number_from(s.at("snr_signed"));
    r.stats.S_th = number_from(s.at("S_th"));
    r.stats.F = number_from(s.at("F"));
    const json& h = s.at("histogram");
    r.stats.histogram.edges = h.at("edges").get<std::vector<double>>();
    r.stats.histogram.count0 = h.at("count_n0").get<std::vector<int>>();
    r.stats.histogram.count1 = h.at("count_n1").get<std::vector<int>>();
    r.used = j.at("used").get<int>();
    r.flagged = j.at("flagged").get<int>();
    if (j.contains("hypothesis_filter")) {
      r.hypothesis_accuracy = number_from(j.at("hypothesis_filter").at("accuracy"));
      r.hypothesis_accuracy_se = number_from(j.at("hypothesis_filter").at("standard_error"));
    }
    for (const json& o : j.at("trajectories")) {
      TrajectoryRow row;
      row.id = o.at("id").get<int>();
      row.hypothesis = o.at("hypothesis").get<int>();
      row.seed = o.at("seed").get<std::uint64_t>();
      for (const json& x : o.at("S")) row.S.push_back(number_from(x));
      row.S_AB = number_from(o.at("S_AB"));
      row.jumps = o.at("jumps").get<int>();
      row.flagged = o.at("flagged").get<bool>();
      if (o.contains("flag_reason")) row.flag_reason = o.at("flag_reason").get<std::string>();
      if (o.contains("posterior")) row.posterior = number_from(o.at("posterior"));
      r.rows.push_back(std::move(row));
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::io, path.string() + ": malformed report: " + e.what());
  }
  for (const auto& row : r.rows)
    if (!row.flagged) (row.hypothesis == 0 ? r.stats.S0_samples : r.stats.S1_samples).push_back(row.S_AB);
  return r;
}

void write_runtime_json(const EnsembleReport& report, const fs::path& path) {
  json j;
  j["format_version"] = kFormatVersion;
  j["runtime_seconds"] = report.runtime_seconds;
  j["parallelism"] = report.config.workers;
  write_file(path, j.dump(1) + "\n");
}

// ---------------------------------------------------------------------------
// CSV files

void write_results_csv(const std::vector<TrajectoryRow>& rows, const fs::path& path) {
  std::string out = kVersionLine + "\ntraj_id,hypothesis,seed,S_A,S_B,S_AB,jumps,flagged\n";
  for (const auto& r : rows) {
    out += std::to_string(r.id) + "," + std::to_string(r.hypothesis) + "," + std::to_string(r.seed) + ",";
    out += (r.S.empty() ? "" : format_double(r.S[0])) + ",";
    out += (r.S.size() > 1 ? format_double(r.S[1]) : "") + ",";
    out += format_double(r.S_AB) + "," + std::to_string(r.jumps) + "," + (r.flagged ? "1" : "0") + "\n";
  }
  write_file(path, out);
}

std::vector<TrajectoryRow> read_results_csv(const fs::path& path) {
  const CsvFile f = read_csv(path, {"traj_id", "hypothesis", "seed", "S_A", "S_B", "S_AB", "jumps", "flagged"});
  std::vector<TrajectoryRow> rows;
  for (const auto& c : f.rows) {
    TrajectoryRow r;
    r.id = static_cast<int>(parse_u64(c[0]));
    r.hypothesis = static_cast<int>(parse_u64(c[1]));
    r.seed = parse_u64(c[2]);
    r.S.push_back(parse_double(c[3]));
    if (!c[4].empty()) r.S.push_back(parse_double(c[4]));
    r.S_AB = parse_double(c[5]);
    r.jumps = static_cast<int>(parse_u64(c[6]));
    r.flagged = c[7] == "1";
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_histogram_csv(const Histogram& h, const fs::path& path) {
  std::string out = kVersionLine + "\nbin_left,bin_right,count_n0,count_n1\n";
  for (std::size_t b = 0; b < h.count0.size(); ++b)
    out += format_double(h.edges[b]) + "," + format_double(h.edges[b + 1]) + "," + std::to_string(h.count0[b]) + "," +
           std::to_string(h.count1[b]) + "\n";
  write_file(path, out);
}

Histogram read_histogram_csv(const fs::path& path) {
  const CsvFile f = read_csv(path, {"bin_left", "bin_right", "count_n0", "count_n1"});
  Histogram h;
  for (std::size_t i = 0; i < f.rows.size(); ++i) {
    const auto& c = f.rows[i];
    if (i == 0) h.edges.push_back(parse_double(c[0]));
    h.edges.push_back(parse_double(c[1]));
    h.count0.push_back(static_cast<int>(parse_u64(c[2])));
    h.count1.push_back(static_cast<int>(parse_u64(c[3])));
  }
  return h;
}

void write_kernel_csv(const FilterKernel& k, const fs::path& path) {
  std::string out = kVersionLine + "\n" + grid_meta(k.grid) + "# orientation=";
  for (std::size_t c = 0; c < k.orientation.size(); ++c) out += (c ? ";" : "") + std::to_string(k.orientation[c]);
  out += "\nt";
  for (const auto& l : k.labels) out += ",h_" + l;
  out += "\n";
  const std::size_t N = k.h.empty() ? 0 : k.h[0].size();
  for (std::size_t i = 0; i < N; ++i) {
    out += format_double(k.grid.time(static_cast<int>(i)));
    for (const auto& h : k.h) out += "," + format_double(h[i]);
    out += "\n";
  }
  write_file(path, out);
}

FilterKernel read_kernel_csv(const fs::path& path) {
  const CsvFile f = read_csv(path, {"t"});
  FilterKernel k;
  k.grid = grid_from(f);
  for (const auto& o : split(f.get("orientation"), ';')) k.orientation.push_back(static_cast<int>(parse_double(o)));
  for (std::size_t c = 1; c < f.header.size(); ++c) {
    if (f.header[c].rfind("h_", 0) != 0) fail(ErrorKind::io, path.string() + ": unexpected kernel column");
    k.labels.push_back(f.header[c].substr(2));
    k.h.emplace_back();
  }
  for (const auto& row : f.rows)
    for (std::size_t c = 1; c < row.size(); ++c) k.h[c - 1].push_back(parse_double(row[c]));
  return k;
}

void write_record_csv(const TrajectoryRecord& rec, const fs::path& path) {
  std::string out = kVersionLine + "\n" + grid_meta(rec.grid) + "# seed=" + std::to_string(rec.seed) + "\nt";
  for (const auto& l : rec.labels) out += ",dQ_" + l;
  out += ",jump\n";
  const std::size_t N = rec.increments.empty() ? 0 : rec.increments[0].size();
  std::size_t next_jump = 0;
  for (std::size_t i = 0; i < N; ++i) {
    const double t = rec.grid.time(static_cast<int>(i));
    out += format_double(t);
    for (const auto& dq : rec.increments) out += "," + format_double(dq[i]);
    int jumps = 0;
    while (next_jump < rec.jump_times.size() && rec.jump_times[next_jump] == t) {
      ++jumps;
      ++next_jump;
    }
    out += "," + std::to_string(jumps) + "\n";
  }
  write_file(path, out);
}

TrajectoryRecord read_record_csv(const fs::path& path) {
  const CsvFile f = read_csv(path, {"t"});
  TrajectoryRecord rec;
  rec.grid = grid_from(f);
  rec.seed = parse_u64(f.get("seed"));
  if (f.header.size() < 2 || f.header.back() != "jump") fail(ErrorKind::io, path.string() + ": missing jump column");
  for (std::size_t c = 1; c + 1 < f.header.size(); ++c) {
    if (f.header[c].rfind("dQ_", 0) != 0) fail(ErrorKind::io, path.string() + ": unexpected record column");
    rec.labels.push_back(f.header[c].substr(3));
    rec.increments.emplace_back();
  }
  for (std::size_t i = 0; i < f.rows.size(); ++i) {
    const auto& row = f.rows[i];
    for (std::size_t c = 1; c + 1 < row.size(); ++c) rec.increments[c - 1].push_back(parse_double(row[c]));
    const auto jumps = parse_u64(row.back());
    for (std::uint64_t q = 0; q < jumps; ++q) rec.jump_times.push_back(rec.grid.time(static_cast<int>(i)));
  }
  return rec;
}

void write_traces_csv(const MeanTrace& value, const MeanTrace& reference, const fs::path& path) {
  if (value.values.size() != reference.values.size()) fail(ErrorKind::signature, "trace lengths differ");
  std::string out = kVersionLine + "\nt,value,reference\n";
  for (std::size_t i = 0; i < value.values.size(); ++i)
    out += format_double(value.grid.time(static_cast<int>(i))) + "," + format_double(value.values[i].real()) + "," +
           format_double(reference.values[i].real()) + "\n";
  write_file(path, out);
}

void write_bundle(const EnsembleReport& report, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());
  write_report_json(report, dir / "report.json");
  write_runtime_json(report, dir / "runtime.json");
  write_results_csv(report.rows, dir / "results.csv");
  write_histogram_csv(report.stats.histogram, dir / "histogram.csv");
  write_kernel_csv(report.kernel, dir / "kernel.csv");
  for (std::size_t i = 0; i < report.records.size(); ++i) {
    // Records held in memory are the retained ones, in row order.
    const auto& rec = report.records[i];
    for (const auto& row : report.rows)
      if (row.seed == rec.seed) {
        write_record_csv(rec, dir / "records" / (std::to_string(row.id) + ".csv"));
        break;
      }
  }
}

RecordSink record_file_sink(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir / "records", ec);
  if (ec) fail(ErrorKind::io, "cannot create " + (dir / "records").string() + ": " + ec.message());
  return [dir](const TrajectoryRow& row, const TrajectoryRecord& rec) {
    write_record_csv(rec, dir / "records" / (std::to_string(row.id) + ".csv"));
  };
}

}  // namespace qtraj
