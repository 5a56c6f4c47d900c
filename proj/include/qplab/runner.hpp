#pragma once

// Configuration, task dispatch, caching, and file emission for the command
// line front end. Everything is deterministic: identical configs produce
// byte-identical CSV/JSON/SVG payloads, results are cached under a content
// hash of the inputs, and cached replays emit the stored bytes unchanged.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "qplab/center.hpp"

namespace qplab {

inline constexpr const char* kToolName = "qplab";
inline constexpr const char* kToolVersion = "1.0.0";

using json = nlohmann::json;           // sorted keys, canonical form
using ojson = nlohmann::ordered_json;  // insertion order, summaries

// ---------------------------------------------------------------------------
// Deterministic serialization. Doubles are printed with 17 significant
// digits, enough to round-trip exactly; the library emitters are bypassed so
// the byte layout never depends on a shortest-representation heuristic.

inline std::string fmt17(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

namespace detail {

inline void append_number(std::string& out, double x) {
  if (std::isnan(x)) {
    out += "null";
  } else if (std::isinf(x)) {
    out += x > 0 ? "\"inf\"" : "\"-inf\"";
  } else {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    out += buf;
  }
}

template <typename J>
inline void emit_json(const J& j, std::string& out, int indent, int depth) {
  const auto pad = [&](int d) {
    if (indent >= 0) {
      out += '\n';
      out.append((size_t)(indent * d), ' ');
    }
  };
  switch (j.type()) {
    case J::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += '{';
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out += ',';
        first = false;
        pad(depth + 1);
        out += J(it.key()).dump();
        out += indent >= 0 ? ": " : ":";
        emit_json(it.value(), out, indent, depth + 1);
      }
      pad(depth);
      out += '}';
      return;
    }
    case J::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      out += '[';
      bool first = true;
      for (const auto& v : j) {
        if (!first) out += ',';
        first = false;
        pad(depth + 1);
        emit_json(v, out, indent, depth + 1);
      }
      pad(depth);
      out += ']';
      return;
    }
    case J::value_t::number_float:
      append_number(out, j.template get<double>());
      return;
    default:
      out += j.dump();  // null, bool, integers, strings
      return;
  }
}

}  // namespace detail

template <typename J>
inline std::string dump_json(const J& j, int indent = 2) {
  std::string out;
  detail::emit_json(j, out, indent, 0);
  return out;
}

inline uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hash_hex(const std::string& s) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)fnv1a64(s));
  return buf;
}

// ---------------------------------------------------------------------------
// Run configuration. Unknown keys are rejected by name so a typo never
// silently falls back to a default; the canonical form round-trips byte for
// byte through parse and re-emission.

[[noreturn]] inline void config_fail(const std::string& msg) { fail(errc::config_error, msg); }

inline const std::vector<std::string>& task_names() {
  static const std::vector<std::string> names = {
      "freq",   "lyap",          "accel",  "classify",      "ids",
      "holder", "localize",      "dual-spectrum", "jensen", "haro-puig",
      "dominated", "center",     "rotation", "duality-check", "truncation-study",
      "bloch",  "sweep"};
  return names;
}

inline bool known_task(const std::string& t) {
  for (const auto& n : task_names())
    if (n == t) return true;
  return false;
}

struct RunConfig {
  std::string task;
  json potential;  // canonical potential object; null when absent
  std::string alpha;
  json params = json::object();
  int jobs = 1;
  std::string cache_dir = ".qplab-cache";
  std::string out;
};

namespace detail {

inline double num_at(const json& j, const std::string& key) {
  if (!j.is_number()) config_fail("key '" + key + "' must be a number");
  return j.get<double>();
}

inline long int_at(const json& j, const std::string& key) {
  if (j.is_number_integer()) return j.get<long>();
  if (j.is_number_float()) {
    double v = j.get<double>();
    if (v == std::floor(v) && std::abs(v) < 9.2e18) return (long)std::llround(v);
  }
  config_fail("key '" + key + "' must be an integer");
}

}  // namespace detail

// Validated, densified potential spec: trig coefficients are re-emitted for
// every |k| <= degree so equivalent inputs hash identically.
inline json canonical_potential(const json& p) {
  if (!p.is_object()) config_fail("key 'potential' must be an object");
  std::string type;
  for (const auto& [k, v] : p.items()) {
    if (k == "type") {
      if (!v.is_string()) config_fail("key 'potential.type' must be a string");
      type = v.get<std::string>();
    } else if (k != "coeffs" && k != "family" && k != "lambda" && k != "ratio") {
      config_fail("unknown key 'potential." + k + "'");
    }
  }
  if (type.empty()) config_fail("key 'potential.type' is required");
  json out = json::object();
  if (type == "trig") {
    for (const auto& [k, v] : p.items())
      if (k != "type" && k != "coeffs") config_fail("key 'potential." + k + "' not valid for type 'trig'");
    if (!p.contains("coeffs") || !p["coeffs"].is_array())
      config_fail("key 'potential.coeffs' must be an array of [k, re, im] triples");
    std::vector<std::pair<long, cplx>> coeffs;
    for (const auto& c : p["coeffs"]) {
      if (!c.is_array() || c.size() != 3)
        config_fail("key 'potential.coeffs' must be an array of [k, re, im] triples");
      long k = detail::int_at(c[0], "potential.coeffs[][0]");
      double re = detail::num_at(c[1], "potential.coeffs[][1]");
      double im = detail::num_at(c[2], "potential.coeffs[][2]");
      coeffs.emplace_back(k, cplx(re, im));
    }
    TrigPotential v;
    try {
      v = TrigPotential(coeffs);
    } catch (const Error& e) {
      config_fail(std::string("key 'potential.coeffs' rejected: ") + e.what());
    }
    json list = json::array();
    for (long k = -v.degree(); k <= v.degree(); ++k) {
      cplx c = v.at(k);
      list.push_back(json::array({k, c.real(), c.imag()}));
    }
    out["type"] = "trig";
    out["coeffs"] = list;
  } else if (type == "analytic") {
    for (const auto& [k, v] : p.items())
      if (k != "type" && k != "family" && k != "lambda" && k != "ratio")
        config_fail("key 'potential." + k + "' not valid for type 'analytic'");
    if (!p.contains("family") || !p["family"].is_string() || p["family"] != "geometric")
      config_fail("key 'potential.family' must be \"geometric\"");
    if (!p.contains("lambda")) config_fail("key 'potential.lambda' is required");
    if (!p.contains("ratio")) config_fail("key 'potential.ratio' is required");
    double lambda = detail::num_at(p["lambda"], "potential.lambda");
    double ratio = detail::num_at(p["ratio"], "potential.ratio");
    if (!(lambda != 0.0)) config_fail("key 'potential.lambda' must be nonzero");
    if (!(ratio > 0.0 && ratio < 1.0)) config_fail("key 'potential.ratio' must lie in (0,1)");
    out["type"] = "analytic";
    out["family"] = "geometric";
    out["lambda"] = lambda;
    out["ratio"] = ratio;
  } else {
    config_fail("key 'potential.type' must be \"trig\" or \"analytic\", got \"" + type + "\"");
  }
  return out;
}

inline TrigPotential trig_of(const RunConfig& cfg) {
  if (cfg.potential.is_null())
    config_fail("key 'potential' is required for task '" + cfg.task + "'");
  if (cfg.potential["type"] != "trig")
    config_fail("task '" + cfg.task + "' needs potential.type \"trig\"");
  std::vector<std::pair<long, cplx>> coeffs;
  for (const auto& c : cfg.potential["coeffs"])
    coeffs.emplace_back(c[0].get<long>(), cplx(c[1].get<double>(), c[2].get<double>()));
  return TrigPotential(coeffs);
}

inline AnalyticPotential analytic_of(const RunConfig& cfg) {
  if (cfg.potential.is_null())
    config_fail("key 'potential' is required for task '" + cfg.task + "'");
  if (cfg.potential["type"] != "analytic")
    config_fail("task '" + cfg.task + "' needs potential.type \"analytic\"");
  return geometric(cfg.potential["lambda"].get<double>(), cfg.potential["ratio"].get<double>());
}

// Frequency expression to double, with a depth ladder for expressions whose
// quotients overflow 64 bits at the default depth.
inline double resolve_alpha(const std::string& expr) {
  for (int depth : {40, 20, 12, 8, 5, 4, 3, 2, 1}) {
    try {
      return make_frequency(expr, depth).alpha;
    } catch (const Error& e) {
      if (e.code() != errc::overflow) throw;
    }
  }
  fail(errc::bad_input, "frequency expression '" + expr + "' overflows at every depth");
}

inline RunConfig parse_config(const json& raw, const std::string& cli_task = "") {
  if (!raw.is_object()) config_fail("config root must be an object");
  RunConfig cfg;
  for (const auto& [k, v] : raw.items()) {
    if (k == "task") {
      if (!v.is_string()) config_fail("key 'task' must be a string");
      cfg.task = v.get<std::string>();
    } else if (k == "potential") {
      cfg.potential = canonical_potential(v);
    } else if (k == "alpha") {
      if (v.is_string())
        cfg.alpha = v.get<std::string>();
      else if (v.is_number())
        cfg.alpha = fmt17(v.get<double>());
      else
        config_fail("key 'alpha' must be a string or a number");
    } else if (k == "params") {
      if (!v.is_object()) config_fail("key 'params' must be an object");
      cfg.params = v;
    } else if (k == "jobs") {
      long j = detail::int_at(v, "jobs");
      if (j < 1) config_fail("key 'jobs' must be >= 1");
      cfg.jobs = (int)j;
    } else if (k == "cache_dir") {
      if (!v.is_string()) config_fail("key 'cache_dir' must be a string");
      cfg.cache_dir = v.get<std::string>();
    } else if (k == "out") {
      if (!v.is_string()) config_fail("key 'out' must be a string");
      cfg.out = v.get<std::string>();
    } else {
      config_fail("unknown key '" + k + "'");
    }
  }
  if (cfg.task.empty()) config_fail("key 'task' is required");
  if (!known_task(cfg.task)) config_fail("key 'task' names no known task: '" + cfg.task + "'");
  if (!cli_task.empty() && cli_task != cfg.task)
    config_fail("key 'task' (\"" + cfg.task + "\") does not match subcommand '" + cli_task + "'");
  if (cfg.alpha.empty()) config_fail("key 'alpha' is required");
  if (cfg.out.empty()) cfg.out = cfg.task;
  return cfg;
}

// Full seven-field canonical form; embedding it in the envelope lets a config
// round-trip through parse_config and re-emission without loss.
inline json canonical_config(const RunConfig& cfg) {
  json j;
  j["task"] = cfg.task;
  j["potential"] = cfg.potential;
  j["alpha"] = cfg.alpha;
  j["params"] = cfg.params;
  j["jobs"] = cfg.jobs;
  j["cache_dir"] = cfg.cache_dir;
  j["out"] = cfg.out;
  return j;
}

// Result-determining part only: parallelism and file placement do not change
// what is computed, so they stay out of the cache key.
inline std::string config_hash(const RunConfig& cfg) {
  json j;
  j["task"] = cfg.task;
  j["potential"] = cfg.potential;
  j["alpha"] = cfg.alpha;
  j["params"] = cfg.params;
  return hash_hex(dump_json(j, -1));
}

// ---------------------------------------------------------------------------
// Task parameter accessor: every present key must be declared, every fetch is
// type-checked, and failures name the offending key.

class Params {
 public:
  Params(const json& p, std::initializer_list<const char*> allowed, std::string task)
      : j_(p), task_(std::move(task)) {
    for (const auto& [k, v] : j_.items()) {
      bool ok = false;
      for (const char* a : allowed)
        if (k == a) ok = true;
      if (!ok) config_fail("unknown key 'params." + k + "' for task '" + task_ + "'");
    }
  }

  bool has(const char* key) const { return j_.contains(key); }

  double num(const char* key, double def) const {
    return has(key) ? detail::num_at(j_[key], qual(key)) : def;
  }
  double num_req(const char* key) const {
    if (!has(key)) miss(key);
    return detail::num_at(j_[key], qual(key));
  }
  long integer(const char* key, long def) const {
    return has(key) ? detail::int_at(j_[key], qual(key)) : def;
  }
  bool boolean(const char* key, bool def) const {
    if (!has(key)) return def;
    if (!j_[key].is_boolean()) config_fail("key '" + qual(key) + "' must be a boolean");
    return j_[key].get<bool>();
  }
  std::string str_req(const char* key) const {
    if (!has(key)) miss(key);
    if (!j_[key].is_string()) config_fail("key '" + qual(key) + "' must be a string");
    return j_[key].get<std::string>();
  }
  std::vector<double> numbers_req(const char* key) const {
    if (!has(key)) miss(key);
    if (!j_[key].is_array() || j_[key].empty())
      config_fail("key '" + qual(key) + "' must be a non-empty array of numbers");
    std::vector<double> out;
    for (const auto& v : j_[key]) out.push_back(detail::num_at(v, qual(key)));
    return out;
  }
  std::vector<double> numbers(const char* key, std::vector<double> def) const {
    return has(key) ? numbers_req(key) : def;
  }
  json object(const char* key) const {
    if (!has(key)) return json::object();
    if (!j_[key].is_object()) config_fail("key '" + qual(key) + "' must be an object");
    return j_[key];
  }

 private:
  std::string qual(const char* key) const { return std::string("params.") + key; }
  [[noreturn]] void miss(const char* key) const {
    config_fail("key 'params." + std::string(key) + "' is required for task '" + task_ + "'");
  }
  const json& j_;
  std::string task_;
};

// ---------------------------------------------------------------------------
// Task output: pre-formatted CSV cells, an ordered JSON summary, and an
// optional primary curve rendered to SVG.

struct TaskResult {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
  ojson summary = ojson::object();
  std::string x_label, y_label;
  std::vector<double> xs, ys;
};

inline ojson checked(double value, double tol, bool pass) {
  ojson o;
  o["value"] = value;
  o["tol"] = tol;
  o["pass"] = pass;
  return o;
}

inline ojson measured(double value, double stderr_) {
  ojson o;
  o["value"] = value;
  o["stderr"] = stderr_;
  return o;
}

namespace detail {

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

}  // namespace detail

inline std::string to_csv(const TaskResult& r) {
  std::string out;
  for (size_t i = 0; i < r.columns.size(); ++i) {
    if (i) out += ',';
    out += detail::csv_quote(r.columns[i]);
  }
  out += '\n';
  for (const auto& row : r.rows) {
    for (size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      out += detail::csv_quote(row[i]);
    }
    out += '\n';
  }
  return out;
}

// Minimal polyline plot; no external renderer. Returns "" when fewer than
// two finite points remain.
inline std::string svg_polyline(const std::vector<double>& xs, const std::vector<double>& ys,
                                const std::string& x_label, const std::string& y_label) {
  std::vector<double> px, py;
  for (size_t i = 0; i < xs.size() && i < ys.size(); ++i)
    if (std::isfinite(xs[i]) && std::isfinite(ys[i])) {
      px.push_back(xs[i]);
      py.push_back(ys[i]);
    }
  if (px.size() < 2) return "";
  double xlo = px[0], xhi = px[0], ylo = py[0], yhi = py[0];
  for (double v : px) {
    xlo = std::min(xlo, v);
    xhi = std::max(xhi, v);
  }
  for (double v : py) {
    ylo = std::min(ylo, v);
    yhi = std::max(yhi, v);
  }
  if (xhi - xlo <= 0) {
    xlo -= 0.5;
    xhi += 0.5;
  }
  if (yhi - ylo <= 0) {
    ylo -= 0.5;
    yhi += 0.5;
  }
  const double W = 640, H = 400, L = 70, R = 20, T = 20, B = 45;
  const auto X = [&](double x) { return L + (x - xlo) / (xhi - xlo) * (W - L - R); };
  const auto Y = [&](double y) { return H - B - (y - ylo) / (yhi - ylo) * (H - T - B); };
  const auto f2 = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return std::string(buf);
  };
  const auto f6 = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return std::string(buf);
  };
  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" "
       "viewBox=\"0 0 640 400\">\n";
  s += "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
  s += "<line x1=\"" + f2(L) + "\" y1=\"" + f2(H - B) + "\" x2=\"" + f2(W - R) + "\" y2=\"" +
       f2(H - B) + "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  s += "<line x1=\"" + f2(L) + "\" y1=\"" + f2(T) + "\" x2=\"" + f2(L) + "\" y2=\"" + f2(H - B) +
       "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  s += "<text x=\"" + f2(L) + "\" y=\"" + f2(H - B + 16) +
       "\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"middle\">" + f6(xlo) +
       "</text>\n";
  s += "<text x=\"" + f2(W - R) + "\" y=\"" + f2(H - B + 16) +
       "\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"middle\">" + f6(xhi) +
       "</text>\n";
  s += "<text x=\"" + f2(L - 6) + "\" y=\"" + f2(H - B + 4) +
       "\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"end\">" + f6(ylo) +
       "</text>\n";
  s += "<text x=\"" + f2(L - 6) + "\" y=\"" + f2(T + 4) +
       "\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"end\">" + f6(yhi) +
       "</text>\n";
  s += "<text x=\"" + f2((L + W - R) / 2) + "\" y=\"" + f2(H - 8) +
       "\" font-family=\"monospace\" font-size=\"12\" text-anchor=\"middle\">" + x_label +
       "</text>\n";
  s += "<text x=\"14\" y=\"" + f2((T + H - B) / 2) +
       "\" font-family=\"monospace\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 "
       "14 " +
       f2((T + H - B) / 2) + ")\">" + y_label + "</text>\n";
  s += "<polyline fill=\"none\" stroke=\"#3465a4\" stroke-width=\"1.5\" points=\"";
  for (size_t i = 0; i < px.size(); ++i) {
    if (i) s += ' ';
    s += f2(X(px[i])) + "," + f2(Y(py[i]));
  }
  s += "\"/>\n</svg>\n";
  return s;
}

// ---------------------------------------------------------------------------
// File helpers and the binary frame cache.

namespace detail {

inline bool read_file(const std::filesystem::path& p, std::string& out) {
  std::ifstream f(p, std::ios::binary);
  if (!f) return false;
  std::ostringstream ss;
  ss << f.rdbuf();
  out = ss.str();
  return f.good() || f.eof();
}

inline void write_file(const std::filesystem::path& p, const std::string& text,
                       const char* what) {
  std::error_code ec;
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path(), ec);
  const std::filesystem::path tmp = p.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (f) f.write(text.data(), (std::streamsize)text.size());
    if (!f) config_fail(std::string("cannot write ") + what + " '" + p.string() + "'");
  }
  std::filesystem::rename(tmp, p, ec);
  if (ec) config_fail(std::string("cannot write ") + what + " '" + p.string() + "'");
}

struct ByteSink {
  std::string buf;
  void raw(const void* p, size_t n) { buf.append((const char*)p, n); }
  void put_d(double v) { raw(&v, sizeof v); }
  void put_i(int64_t v) { raw(&v, sizeof v); }
  void put_c(cplx v) {
    put_d(v.real());
    put_d(v.imag());
  }
  void put_vd(const Eigen::VectorXd& v) {
    put_i(v.size());
    raw(v.data(), sizeof(double) * (size_t)v.size());
  }
  void put_vc(const Eigen::VectorXcd& v) {
    put_i(v.size());
    raw(v.data(), sizeof(cplx) * (size_t)v.size());
  }
  void put_mc(const MatrixXcd& m) {
    put_i(m.rows());
    put_i(m.cols());
    raw(m.data(), sizeof(cplx) * (size_t)(m.rows() * m.cols()));
  }
};

struct ByteSource {
  const std::string& buf;
  size_t pos = 0;
  bool ok = true;
  bool raw(void* p, size_t n) {
    if (pos + n > buf.size()) return ok = false;
    std::memcpy(p, buf.data() + pos, n);
    pos += n;
    return true;
  }
  double get_d() {
    double v = 0;
    raw(&v, sizeof v);
    return v;
  }
  int64_t get_i() {
    int64_t v = 0;
    raw(&v, sizeof v);
    return v;
  }
  cplx get_c() {
    double re = get_d(), im = get_d();
    return {re, im};
  }
  bool get_vd(Eigen::VectorXd& v) {
    int64_t n = get_i();
    if (!ok || n < 0 || n > (1 << 26)) return ok = false;
    v.resize(n);
    return raw(v.data(), sizeof(double) * (size_t)n);
  }
  bool get_vc(Eigen::VectorXcd& v) {
    int64_t n = get_i();
    if (!ok || n < 0 || n > (1 << 26)) return ok = false;
    v.resize(n);
    return raw(v.data(), sizeof(cplx) * (size_t)n);
  }
  bool get_mc(MatrixXcd& m) {
    int64_t r = get_i(), c = get_i();
    if (!ok || r < 0 || c < 0 || r * c > (1 << 26)) return ok = false;
    m.resize(r, c);
    return raw(m.data(), sizeof(cplx) * (size_t)(r * c));
  }
};

inline constexpr char kFrameMagic[8] = {'Q', 'P', 'F', 'R', 'A', 'M', 'E', '1'};

}  // namespace detail

inline std::string frame_cache_key(const TrigPotential& v, double alpha, double E, double eps,
                                   long grid, long horizon) {
  std::string s = "frame";
  for (long k = -v.degree(); k <= v.degree(); ++k) {
    cplx c = v.at(k);
    s += "|" + std::to_string(k) + ":" + fmt17(c.real()) + ":" + fmt17(c.imag());
  }
  s += "|a=" + fmt17(alpha) + "|E=" + fmt17(E) + "|e=" + fmt17(eps);
  s += "|g=" + std::to_string(grid) + "|h=" + std::to_string(horizon);
  return hash_hex(s);
}

inline std::string frame_to_blob(const CenterFrame& f) {
  detail::ByteSink s;
  s.raw(detail::kFrameMagic, sizeof detail::kFrameMagic);
  s.put_i(f.v.degree());
  for (long k = -f.v.degree(); k <= f.v.degree(); ++k) s.put_c(f.v.at(k));
  s.put_d(f.alpha);
  s.put_d(f.energy);
  s.put_d(f.eps);
  s.put_i(f.d);
  s.put_mc(f.S);
  s.put_vd(f.theta_grid);
  s.put_mc(f.u_basis);
  s.put_mc(f.v_basis);
  s.put_vc(f.c_values);
  s.put_vd(f.phi);
  s.put_i((int64_t)f.C_values.size());
  for (const auto& m : f.C_values)
    for (int c = 0; c < 2; ++c)
      for (int r = 0; r < 2; ++r) s.put_c(m(r, c));
  s.put_d(f.strip_radius);
  s.put_d(f.domination_margin);
  s.put_d(f.winding);
  s.put_d(f.mean_phi);
  s.put_d(f.frame_residual);
  s.put_d(f.normalization_error);
  s.put_d(f.realness_defect);
  s.put_d(f.det_defect);
  s.put_d(f.omega_defect);
  s.put_d(f.sigma2_min);
  s.put_d(f.sigma3_max);
  s.put_i(f.horizon);
  s.put_i(f.anchor_plus);
  s.put_i(f.anchor_minus);
  return std::move(s.buf);
}

inline bool frame_from_blob(const std::string& blob, CenterFrame& f) {
  detail::ByteSource s{blob};
  char magic[8];
  if (!s.raw(magic, 8) || std::memcmp(magic, detail::kFrameMagic, 8) != 0) return false;
  int64_t deg = s.get_i();
  if (!s.ok || deg < 0 || deg > 4096) return false;
  std::vector<std::pair<long, cplx>> coeffs;
  for (long k = -deg; k <= deg; ++k) coeffs.emplace_back(k, s.get_c());
  if (!s.ok) return false;
  f.v = TrigPotential(coeffs);
  f.alpha = s.get_d();
  f.energy = s.get_d();
  f.eps = s.get_d();
  f.d = s.get_i();
  if (!s.get_mc(f.S)) return false;
  if (!s.get_vd(f.theta_grid)) return false;
  if (!s.get_mc(f.u_basis)) return false;
  if (!s.get_mc(f.v_basis)) return false;
  if (!s.get_vc(f.c_values)) return false;
  if (!s.get_vd(f.phi)) return false;
  int64_t nc = s.get_i();
  if (!s.ok || nc < 0 || nc > (1 << 24)) return false;
  f.C_values.assign((size_t)nc, Matrix2cd::Zero());
  for (auto& m : f.C_values)
    for (int c = 0; c < 2; ++c)
      for (int r = 0; r < 2; ++r) m(r, c) = s.get_c();
  f.strip_radius = s.get_d();
  f.domination_margin = s.get_d();
  f.winding = s.get_d();
  f.mean_phi = s.get_d();
  f.frame_residual = s.get_d();
  f.normalization_error = s.get_d();
  f.realness_defect = s.get_d();
  f.det_defect = s.get_d();
  f.omega_defect = s.get_d();
  f.sigma2_min = s.get_d();
  f.sigma3_max = s.get_d();
  f.horizon = s.get_i();
  f.anchor_plus = (int)s.get_i();
  f.anchor_minus = (int)s.get_i();
  return s.ok && s.pos == blob.size();
}

struct CacheSettings {
  std::string dir;
  bool enabled = true;
};

inline CenterFrame cached_center_frame(const TrigPotential& v, double alpha, double E, double eps,
                                       const CenterOptions& copt, const CacheSettings& cache) {
  std::filesystem::path path;
  if (cache.enabled) {
    const std::string key = frame_cache_key(v, alpha, E, eps, copt.grid, copt.horizon);
    path = std::filesystem::path(cache.dir) / ("frame-" + key + ".bin");
    std::string blob;
    CenterFrame f;
    if (detail::read_file(path, blob) && frame_from_blob(blob, f)) return f;
  }
  CenterFrame f = center_frame(v, alpha, E, eps, copt);
  if (cache.enabled) detail::write_file(path, frame_to_blob(f), "frame cache entry");
  return f;
}

// ---------------------------------------------------------------------------
// Task handlers. Each validates its parameters, runs the underlying kernel,
// and shapes rows plus a summary; thresholds live next to the values they
// judge.

namespace tasks {

inline LyapunovOptions lyap_opts(const Params& p) {
  LyapunovOptions o;
  o.horizon = p.integer("horizon", o.horizon);
  o.segments = (int)p.integer("segments", o.segments);
  o.tol = p.num("tol", o.tol);
  return o;
}

inline RotationOptions rot_opts(const Params& p) {
  RotationOptions o;
  o.horizon = p.integer("rotation_horizon", o.horizon);
  o.tol = p.num("rotation_tol", o.tol);
  return o;
}

inline TaskResult freq(const RunConfig& cfg, const CacheSettings&) {
  Params p(cfg.params, {"depth"}, cfg.task);
  const int depth = (int)p.integer("depth", 40);
  auto f = make_frequency(cfg.alpha, depth);
  TaskResult r;
  r.columns = {"k", "quotient", "p", "q", "beta_term"};
  for (size_t i = 0; i < f.quotients.size(); ++i) {
    std::vector<std::string> row = {std::to_string(i + 1), std::to_string(f.quotients[i]),
                                    std::to_string(f.p[i]), std::to_string(f.q[i]), ""};
    if (i < f.beta_terms.size()) row[4] = fmt17(f.beta_terms[i]);
    r.rows.push_back(std::move(row));
  }
  r.summary["alpha"] = f.alpha;
  r.summary["depth"] = f.depth();
  r.summary["beta_estimate"] = f.beta_estimate;
  r.x_label = "k";
  r.y_label = "beta_term";
  for (size_t i = 0; i < f.beta_terms.size(); ++i) {
    r.xs.push_back((double)(i + 1));
    r.ys.push_back(f.beta_terms[i]);
  }
  return r;
}

inline TaskResult lyap(const RunConfig& cfg, const CacheSettings&) {
  Params p(cfg.params, {"E", "eps", "horizon", "segments", "tol"}, cfg.task);
  const double E = p.num_req("E");
  const double eps = p.num("eps", 0.0);
  const double alpha = resolve_alpha(cfg.alpha);
  auto v = trig_of(cfg);
  CocycleMap c = schrodinger_cocycle(v, alpha, E);
  if (eps != 0.0) c = complexify(c, eps);
  auto s = lyapunov_spectrum(c, lyap_opts(p));
  TaskResult r;
  r.columns = {"E", "eps", "L", "stderr", "horizon", "segments"};
  r.rows.push_back({fmt17(E), fmt17(eps), fmt17(s.exponents[0]), fmt17(s.stderr_[0]),
                    std::to_string(s.horizon), std::to_string(s.segments)});
  r.summary["L"] = measured(s.exponents[0], s.stderr_[0]);
  r.summary["horizon"] = s.horizon;
  r.summary["segments"] = s.segments;
  return r;
}

inline TaskResult accel(const RunConfig& cfg, const CacheSettings&) {
  Params p(cfg.params,
           {"E", "eps_max", "n_eps", "max_segments", "horizon", "segments", "tol"}, cfg.task);
  const double E = p.num_req("E");
  ProfileOptions opt;
  opt.eps_max = p.num("eps_max", opt.eps_max);
  opt.n_eps = (int)p.integer("n_eps", opt.n_eps);
  opt.max_segments = (int)p.integer("max_segments", opt.max_segments);
  opt.lyap = lyap_opts(p);
  auto v = trig_of(cfg);
  auto prof = lyapunov_profile(v, resolve_alpha(cfg.alpha), E, opt);
  TaskResult r;
  r.columns = {"eps", "L", "stderr"};
  for (size_t i = 0; i < prof.eps_grid.size(); ++i)
    r.rows.push_back({fmt17(prof.eps_grid[i]), fmt17(prof.L_values[i]), fmt17(prof.L_stderr[i])});
  r.summary["omega"] = acceleration(prof);
  r.summary["t_omega"] = t_acceleration(prof);
  r.summary["snap_miss"] = checked(prof.snap_miss, opt.snap_tol, prof.snap_miss <= opt.snap_tol);
  r.summary["fit_residual"] = prof.fit_residual;
  ojson bp = ojson::array(), sl = ojson::array(), rs = ojson::array();
  for (double b : prof.breakpoints) bp.push_back(b);
  for (long s : prof.slopes) sl.push_back(s);
  for (double s : prof.raw_slopes) rs.push_back(s);
  r.summary["breakpoints"] = bp;
  r.summary["slopes"] = sl;
  r.summary["raw_slopes"] = rs;
  r.x_label = "eps";
  r.y_label = "L";
  r.xs = prof.eps_grid;
  r.ys = prof.L_values;
  return r;
}

inline TaskResult classify_task(const RunConfig& cfg, const CacheSettings&) {
  Params p(cfg.params,
           {"E", "l_zero_floor", "eps_max", "n_eps", "horizon", "segments", "tol"}, cfg.task);
  const double E = p.num_req("E");
  ClassifyOptions opt;
  opt.l_zero_floor = p.num("l_zero_floor", opt.l_zero_floor);
  opt.profile.eps_max = p.num("eps_max", opt.profile.eps_max);
  opt.profile.n_eps = (int)p.integer("n_eps", opt.profile.n_eps);
  opt.profile.lyap = lyap_opts(p);
  auto v = trig_of(cfg);
  auto label = classify(v, resolve_alpha(cfg.alpha), E, opt);
  TaskResult r;
  r.columns = {"E", "regime", "type_one", "omega", "t_omega", "L0", "L0_stderr"};
  r.rows.push_back({fmt17(E), regime_name(label.regime), label.type_one ? "true" : "false",
                    std::to_string(label.omega), std::to_string(label.t_omega), fmt17(label.L0),
                    fmt17(label.L0_stderr)});
  r.summary["regime"] = regime_name(label.regime);
  r.summary["type_one"] = label.type_one;
  r.summary["omega"] = label.omega;
  r.summary["t_omega"] = label.t_omega;
  r.summary["L0"] = measured(label.L0, label.L0_stderr);
  r.summary["zero_threshold"] = label.zero_threshold;
  return r;
}

inline TaskResult ids_task(const RunConfig& cfg, const CacheSettings&) {
  Params p(cfg.params,
           {"E", "size", "theta_samples", "rotation_check", "rotation_tol", "rotation_horizon",
            "residual_tol"},
           cfg.task);
  const double E = p.num_req("E");
  IdsOptions opt;
  opt.size = p.integer("size", opt.size);
  opt.theta_samples = (int)p.integer("theta_samples", opt.theta_samples);
  auto v = trig_of(cfg);
  const double alpha = resolve_alpha(cfg.alpha);
  auto rec = ids(v, alpha, E, opt);
  TaskResult r;
  const bool check = p.boolean("rotation_check", false);
  r.columns = {"E", "N", "stderr", "size", "theta_samples"};
  std::vector<std::string> row = {fmt17(E), fmt17(rec.N), fmt17(rec.stderr_),
                                  std::to_string(rec.size), std::to_string(rec.theta_samples)};
  r.summary["N"] = measured(rec.N, rec.stderr_);
  if (check) {
    const double rho = schrodinger_rotation(v, alpha, E, rot_opts(p));
    const double residual = std::abs(rec.N - (1.0 - 2.0 * rho));
    const double tol = p.num("residual_tol", 1e-2);
    r.columns.push_back("rho");
    r.columns.push_back("counting_residual");
    row.push_back(fmt17(rho));
    row.push_back(fmt17(residual));
    r.summary["rho"] = rho;
    r.summary["counting_residual"] = checked(residual, tol, residual <= tol);
  }
  r.rows.push_back(std::move(row));
  return r;
}

inline TaskResult holder(const RunConfig& cfg, const CacheSettings&) {
  Params p(cfg.params,
           {"energies", "half_width", "resolution", "size", "theta_samples", "scales",
            "exponent_lo", "exponent_hi", "r2_min"},
           cfg.task);
  const auto energies = p.numbers_req("energies");
  const double hw = p.num("half_width", 0.05);
  const double res = p.num("resolution", 1e-4);
  if (!(hw > 0.0) || !(res > 0.0) || res > hw)
    config_fail("keys 'params.half_width' and 'params.resolution' must satisfy 0 < resolution <= half_width");
  IdsOptions opt;
  opt.size = p.integer("size", 4000);
  opt.theta_samples = (int)p.integer("theta_samples", opt.theta_samples);
  std::vector<double> scales = p.numbers(
      "scales", {hw / 2.0, hw / 4.0, hw / 8.0, hw / 16.0, hw / 32.0});
  const double lo_tol = p.num("exponent_lo", 0.4);
  const double hi_tol = p.num("exponent_hi", 0.6);
  const double r2_min = p.num("r2_min", 0.9);
  auto v = trig_of(cfg);
  const double alpha = resolve_alpha(cfg.alpha);
  TaskResult r;
  r.columns = {"E0", "exponent", "r2", "grid_points", "in_range"};
  ojson list = ojson::array();
  bool all = true;
  for (double E0 : energies) {
    const long m = (long)std::llround(2.0 * hw / res) + 1;
    std::vector<IdsRecord> sweep;
    sweep.reserve((size_t)m);
    for (long j = 0; j < m; ++j) sweep.push_back(ids(v, alpha, E0 - hw + (double)j * res, opt));
    auto est = holder_exponent(sweep, E0, scales);
    const bool ok = est.exponent >= lo_tol && est.exponent <= hi_tol && est.r2 > r2_min;
    all = all && ok;
    r.rows.push_back({fmt17(E0), fmt17(est.exponent), fmt17(est.r2), std::to_string(m),
                      ok ? "true" : "false"});
    ojson e;
    e["E0"] = E0;
    e["exponent"] = est.exponent;
    e["r2"] = est.r2;
    e["in_range"] = ok;
    list.push_back(e);
    r.xs.push_back(E0);
    r.ys.push_back(est.exponent);
  }
  r.summary["exponent_lo"] = lo_tol;
  r.summary["exponent_hi"] = hi_tol;
  r.summary["r2_min"] = r2_min;
  r.summary["all_in_range"] = all;
  r.summary["estimates"] = list;
  r.x_label = "E0";
  r.y_label = "exponent";
  return r;
}

inline TaskResult localize(const RunConfig& cfg, const CacheSettings&) {
  Params p(cfg.params, {"theta", "E_lo", "E_hi", "size"}, cfg.task);
  const double theta = p.num("theta", 0.0);
  const double elo = p.num_req("E_lo");
  const double ehi = p.num_req("E_hi");
  const long size = p.integer("size", 2000);
  auto v = trig_of(cfg);
  auto rep = localization_probe(v, resolve_alpha(cfg.alpha), theta, elo, ehi, size);
  TaskResult r;
  r.columns = {"lambda", "rate", "r2", "ipr", "center"};
  for (size_t i = 0; i < rep.energies.size(); ++i)
    r.rows.push_back({fmt17(rep.energies[i]), fmt17(rep.rates[i]), fmt17(rep.r2[i]),
                      fmt17(rep.iprs[i]), std::to_string(rep.centers[i])});
  r.summary["count"] = (long)rep.energies.size();
  r.summary["median_rate"] = rep.median_rate;
  r.summary["median_ipr"] = rep.median_ipr;
  r.x_label = "lambda";
  r.y_label = "rate";
  r.xs = rep.energies;
  r.ys = rep.rates;
  return r;
}

inline TaskResult dual_spectrum(const RunConfig& cfg, const CacheSettings&) {
  Params p(cfg.params, {"E", "eps", "horizon", "segments", "tol"}, cfg.task);
  const double E = p.num_req("E");
  const double eps = p.num("eps", 0.0);
  auto v = trig_of(cfg);
  auto dc = dual_cocycle(v, resolve_alpha(cfg.alpha), cplx(E), eps);
  auto s = dual_lyapunov_spectrum(dc, lyap_opts(p));
  const int m = dc.map.dim;
  TaskResult r;
  r.columns = {"i", "L", "stderr"};
  for (int i = 0; i < m; ++i)
    r.rows.push_back(
        {std::to_string(i + 1), fmt17(s.full.exponents[i]), fmt17(s.full.stderr_[i])});
  double pairing = 0.0, tol = 0.0, se_max = 0.0;
  for (int i = 0; i < m / 2; ++i) {
    pairing = std::max(pairing, std::abs(s.full.exponents[i] + s.full.exponents[m - 1 - i]));
    tol = std::max(tol, 3.0 * (s.full.stderr_[i] + s.full.stderr_[m - 1 - i]) + 1e-4);
  }
  for (double se : s.full.stderr_) se_max = std::max(se_max, se);
  r.summary["d"] = dc.d;
  r.summary["eps"] = eps;
  r.summary["pairing_max"] = checked(pairing, tol, pairing <= tol);
  r.summary["stderr_max"] = se_max;
  r.summary["horizon"] = s.full.horizon;
  ojson gam = ojson::array();
  for (double g : s.gamma) gam.push_back(g);
  r.summary["gamma"] = gam;
  r.x_label = "i";
  r.y_label = "L";
  for (int i = 0; i < m; ++i) {
    r.xs.push_back(i + 1);
    r.ys.push_back(s.full.exponents[i]);
  }
  return r;
}

inline TaskResult jensen(const RunConfig& cfg, const CacheSettings&) {
  Params p(cfg.params,
           {"E", "L_E", "eps_max", "n_eps", "horizon", "segments", "tol", "flat_tol",
            "radius_rel_tol", "slope_rel_tol", "offset_tol"},
           cfg.task);
  const double E = p.num_req("E");
  auto v = trig_of(cfg);
  const double alpha = resolve_alpha(cfg.alpha);
  JensenOptions opt;
  opt.eps_max = p.num("eps_max", opt.eps_max);
  opt.n_eps = (int)p.integer("n_eps", opt.n_eps);
  opt.lyap = lyap_opts(p);
  double L_E;
  if (p.has("L_E"))
    L_E = p.num_req("L_E");
  else
    L_E = lyapunov_spectrum(schrodinger_cocycle(v, alpha, E), opt.lyap).exponents[0];
  auto prof = jensen_profile(v, alpha, E, L_E, opt);
  TaskResult r;
  r.columns = {"eps", "value", "stderr"};
  for (size_t i = 0; i < prof.eps_grid.size(); ++i)
    r.rows.push_back({fmt17(prof.eps_grid[i]), fmt17(prof.values[i]), fmt17(prof.stderrs[i])});
  const double radius_expected = L_E / kTwoPi;
  const double offset_expected = -std::log(std::abs(v.at(v.degree())));
  double flatness = 0.0;
  for (size_t i = 0; i < prof.eps_grid.size(); ++i)
    if (std::abs(prof.eps_grid[i]) <= 0.9 * radius_expected)
      flatness = std::max(flatness, std::abs(prof.values[i] - prof.flat_value));
  const double flat_tol = p.num("flat_tol", 1e-2);
  const double radius_rel = p.num("radius_rel_tol", 0.1);
  const double slope_rel = p.num("slope_rel_tol", 0.05);
  const double offset_tol = p.num("offset_tol", 0.05);
  r.summary["L_E"] = L_E;
  r.summary["flat_value"] = prof.flat_value;
  r.summary["flatness"] = checked(flatness, flat_tol, flatness <= flat_tol);
  r.summary["flat_radius"] =
      checked(prof.flat_radius_fit, radius_rel,
              radius_expected > 0.0 &&
                  std::abs(prof.flat_radius_fit / radius_expected - 1.0) <= radius_rel);
  r.summary["flat_radius_expected"] = radius_expected;
  r.summary["post_slope"] = checked(prof.post_slope_fit, slope_rel,
                                    std::abs(prof.post_slope_fit / kTwoPi - 1.0) <= slope_rel);
  r.summary["post_slope_expected"] = kTwoPi;
  r.summary["asymptote_offset"] =
      checked(prof.asymptote_offset, offset_tol,
              std::abs(prof.asymptote_offset - offset_expected) <= offset_tol);
  r.summary["asymptote_expected"] = offset_expected;
  r.summary["fit_residual"] = prof.fit_residual;
  r.x_label = "eps";
  r.y_label = "dual exterior exponent";
  r.xs = prof.eps_grid;
  r.ys = prof.values;
  return r;
}

inline TaskResult haro_puig(const RunConfig& cfg, const CacheSettings&) {
  Params p(cfg.params, {"E", "horizon", "segments", "tol", "residual_tol"}, cfg.task);
  const double E = p.num_req("E");
  auto v = trig_of(cfg);
  const double residual = haro_puig_check(v, resolve_alpha(cfg.alpha), E, lyap_opts(p));
  const double tol = p.num("residual_tol", 3e-2);
  TaskResult r;
  r.columns = {"E", "residual"};
  r.rows.push_back({fmt17(E), fmt17(residual)});
  r.summary["residual"] = checked(residual, tol, residual <= tol);
  return r;
}

inline TaskResult dominated(const RunConfig& cfg, const CacheSettings&) {
  Params p(cfg.params, {"E", "eps", "k", "horizon", "theta_samples", "margin_per_step"},
           cfg.task);
  const double E = p.num_req("E");
  const double eps = p.num("eps", 0.0);
  const int k = (int)p.integer("k", 1);
  const long horizon = p.integer("horizon", 4096);
  const int samples = (int)p.integer("theta_samples", 4);
  const double margin = p.num("margin_per_step", 0.01);
  auto v = trig_of(cfg);
  auto dc = dual_cocycle(v, resolve_alpha(cfg.alpha), cplx(E), eps);
  auto rep = domination_check(dc.map, k, horizon, samples, margin);
  TaskResult r;
  r.columns = {"k", "dominated", "margin", "failing_theta", "horizon", "theta_samples"};
  r.rows.push_back({std::to_string(rep.k), rep.dominated ? "true" : "false", fmt17(rep.margin),
                    fmt17(rep.failing_theta), std::to_string(rep.horizon),
                    std::to_string(rep.theta_samples)});
  r.summary["dominated"] = rep.dominated;
  r.summary["margin"] = checked(rep.margin, margin, rep.dominated);
  r.summary["failing_theta"] = rep.failing_theta;
  return r;
}

inline CenterOptions center_opts(const Params& p) {
  CenterOptions o;
  o.grid = p.integer("grid", o.grid);
  o.horizon = p.integer("center_horizon", o.horizon);
  return o;
}

inline TaskResult center(const RunConfig& cfg, const CacheSettings& cache) {
  Params p(cfg.params,
           {"E", "eps", "grid", "center_horizon", "frame_tol", "realness_tol", "det_tol"},
           cfg.task);
  const double E = p.num_req("E");
  const double eps = p.num("eps", 0.0);
  auto v = trig_of(cfg);
  CenterOptions copt = center_opts(p);
  auto f = cached_center_frame(v, resolve_alpha(cfg.alpha), E, eps, copt, cache);
  TaskResult r;
  r.columns = {"theta", "phi", "c_re", "c_im", "C00_re", "C00_im", "C01_re", "C01_im",
               "C10_re", "C10_im", "C11_re", "C11_im"};
  for (long j = 0; j < f.theta_grid.size(); ++j) {
    const auto& C = f.C_values[(size_t)j];
    r.rows.push_back({fmt17(f.theta_grid[j]), fmt17(f.phi[j]), fmt17(f.c_values[j].real()),
                      fmt17(f.c_values[j].imag()), fmt17(C(0, 0).real()), fmt17(C(0, 0).imag()),
                      fmt17(C(0, 1).real()), fmt17(C(0, 1).imag()), fmt17(C(1, 0).real()),
                      fmt17(C(1, 0).imag()), fmt17(C(1, 1).real()), fmt17(C(1, 1).imag())});
  }
  const double frame_tol = p.num("frame_tol", 1e-6);
  const double realness_tol = p.num("realness_tol", 1e-6);
  const double det_tol = p.num("det_tol", 1e-8);
  r.summary["d"] = f.d;
  r.summary["eps"] = f.eps;
  r.summary["frame_residual"] = checked(f.frame_residual, frame_tol, f.frame_residual < frame_tol);
  r.summary["normalization_error"] = f.normalization_error;
  r.summary["realness_defect"] =
      checked(f.realness_defect, realness_tol, eps != 0.0 || f.realness_defect < realness_tol);
  r.summary["det_defect"] = checked(f.det_defect, det_tol, f.det_defect < det_tol);
  r.summary["omega_defect"] = f.omega_defect;
  r.summary["winding"] = f.winding;
  r.summary["mean_phi"] = f.mean_phi;
  r.summary["sigma2_min"] = f.sigma2_min;
  r.summary["sigma3_max"] = f.sigma3_max;
  r.summary["domination_margin"] = f.domination_margin;
  r.summary["horizon"] = f.horizon;
  r.x_label = "theta";
  r.y_label = "phi";
  for (long j = 0; j < f.theta_grid.size(); ++j) {
    r.xs.push_back(f.theta_grid[j]);
    r.ys.push_back(f.phi[j]);
  }
  return r;
}

inline TaskResult rotation(const RunConfig& cfg, const CacheSettings& cache) {
  Params p(cfg.params,
           {"E", "grid", "center_horizon", "with_ids", "size", "theta_samples", "rotation_tol",
            "rotation_horizon"},
           cfg.task);
  const double E = p.num_req("E");
  auto v = trig_of(cfg);
  CenterOptions copt = center_opts(p);
  auto f = cached_center_frame(v, resolve_alpha(cfg.alpha), E, 0.0, copt, cache);
  CenterRotationOptions ropt;
  ropt.rotation = rot_opts(p);
  ropt.with_ids = p.boolean("with_ids", true);
  ropt.ids.size = p.integer("size", ropt.ids.size);
  ropt.ids.theta_samples = (int)p.integer("theta_samples", ropt.ids.theta_samples);
  auto rec = center_rotation(f, ropt);
  TaskResult r;
  r.columns = {"E", "rho_hat", "rho1", "rho2", "mean_phi", "N", "winding_correction"};
  r.rows.push_back({fmt17(rec.E), fmt17(rec.rho_hat), fmt17(rec.rho1), fmt17(rec.rho2),
                    fmt17(rec.mean_phi), fmt17(rec.N), std::to_string(rec.winding_correction)});
  r.summary["rho_hat"] = rec.rho_hat;
  r.summary["rho1"] = rec.rho1;
  r.summary["rho2"] = rec.rho2;
  r.summary["mean_phi"] = rec.mean_phi;
  r.summary["N"] = rec.N;
  r.summary["winding_correction"] = rec.winding_correction;
  return r;
}

inline TaskResult duality_check(const RunConfig& cfg, const CacheSettings&) {
  Params p(cfg.params,
           {"energies", "grid", "center_horizon", "size", "theta_samples", "rotation_tol",
            "rotation_horizon", "l_zero_floor", "residual_tol", "monotone_tol"},
           cfg.task);
  const auto energies = p.numbers_req("energies");
  SweepOptions opt;
  opt.center = center_opts(p);
  opt.classify.l_zero_floor = p.num("l_zero_floor", opt.classify.l_zero_floor);
  opt.rotation.rotation = rot_opts(p);
  opt.rotation.ids.size = p.integer("size", opt.rotation.ids.size);
  opt.rotation.ids.theta_samples =
      (int)p.integer("theta_samples", opt.rotation.ids.theta_samples);
  auto v = trig_of(cfg);
  auto sweep = duality_ids_sweep(v, resolve_alpha(cfg.alpha), energies, opt);
  TaskResult r;
  r.columns = {"E", "rho_hat", "rho1", "rho2", "mean_phi", "N", "L", "omega"};
  for (const auto& rec : sweep.records)
    r.rows.push_back({fmt17(rec.E), fmt17(rec.rho_hat), fmt17(rec.rho1), fmt17(rec.rho2),
                      fmt17(rec.mean_phi), fmt17(rec.N), fmt17(rec.L),
                      std::to_string(rec.omega)});
  const double rtol = p.num("residual_tol", 1e-2);
  const double mtol = p.num("monotone_tol", 1e-3);
  r.summary["points"] = (long)sweep.records.size();
  r.summary["k"] = sweep.k;
  r.summary["branch"] = sweep.branch;
  r.summary["residual"] = checked(sweep.residual, rtol, sweep.residual < rtol);
  r.summary["rho1_monotone_violation"] =
      checked(sweep.rho1_monotone_violation, mtol, sweep.rho1_monotone_violation < mtol);
  r.summary["rho2_monotone_violation"] =
      checked(sweep.rho2_monotone_violation, mtol, sweep.rho2_monotone_violation < mtol);
  r.x_label = "E";
  r.y_label = "rho_hat";
  for (const auto& rec : sweep.records) {
    r.xs.push_back(rec.E);
    r.ys.push_back(rec.rho_hat);
  }
  return r;
}

inline TaskResult truncation_study(const RunConfig& cfg, const CacheSettings&) {
  Params p(cfg.params, {"E", "n_lo", "n_hi", "grid", "center_horizon", "verify_regime", "r2_min"},
           cfg.task);
  const double E = p.num_req("E");
  const long n_lo = p.integer("n_lo", 2);
  const long n_hi = p.integer("n_hi", 8);
  TruncationOptions opt;
  opt.center = center_opts(p);
  opt.verify_regime = p.boolean("verify_regime", true);
  auto ap = analytic_of(cfg);
  auto rep = truncation_convergence(ap, resolve_alpha(cfg.alpha), E, n_lo, n_hi, opt);
  TaskResult r;
  r.columns = {"n_from", "n_to", "dist", "ln_dist"};
  for (size_t i = 0; i + 1 < rep.orders.size(); ++i) {
    const double d = rep.dists[i];
    r.rows.push_back({std::to_string(rep.orders[i]), std::to_string(rep.orders[i + 1]), fmt17(d),
                      fmt17(std::log(d))});
    if (std::isfinite(d) && d > 0.0) {
      r.xs.push_back((double)rep.orders[i]);
      r.ys.push_back(std::log(d));
    }
  }
  const double r2_min = p.num("r2_min", 0.9);
  r.summary["slope"] = checked(rep.slope, 0.0, rep.slope < 0.0);
  r.summary["r2"] = checked(rep.r2, r2_min, rep.r2 > r2_min);
  ojson built = ojson::array(), regime = ojson::array(), warn = ojson::array();
  for (bool b : rep.built) built.push_back(b);
  for (bool b : rep.regime_ok) regime.push_back(b);
  for (const auto& w : rep.warnings) warn.push_back(w);
  r.summary["built"] = built;
  r.summary["regime_ok"] = regime;
  r.summary["warnings"] = warn;
  r.summary["limit_order"] = rep.orders.empty() ? 0L : rep.orders.back();
  r.x_label = "n";
  r.y_label = "ln frame distance";
  return r;
}

inline TaskResult bloch(const RunConfig& cfg, const CacheSettings& cache) {
  Params p(cfg.params,
           {"E", "grid", "center_horizon", "strip", "n_max", "tau", "gamma", "k_max", "budget",
            "subcritical_gate", "target_residual", "residual_tol"},
           cfg.task);
  const double E = p.num_req("E");
  auto v = trig_of(cfg);
  const double alpha = resolve_alpha(cfg.alpha);
  CenterOptions copt = center_opts(p);
  auto f = cached_center_frame(v, alpha, E, 0.0, copt, cache);
  const double strip = p.num("strip", 0.1);
  auto sol = cohomological_solve(f.phi, alpha, strip);
  DiophantineWindow window;
  window.tau = p.num("tau", window.tau);
  window.gamma = p.num("gamma", window.gamma);
  window.k_max = p.integer("k_max", window.k_max);
  BlochOptions opt;
  opt.n_max = p.integer("n_max", opt.n_max);
  opt.subcritical_gate = p.num("subcritical_gate", opt.subcritical_gate);
  opt.target_residual = p.num("target_residual", opt.target_residual);
  const int budget = (int)p.integer("budget", 48);
  auto pair = bloch_reconstruct(f, sol.psi, alpha, window, budget, opt);
  TaskResult r;
  r.columns = {"n", "u_re", "u_im", "u_abs", "v_re", "v_im", "v_abs"};
  const long n_max = pair.u.n_max;
  for (long n = -n_max; n <= n_max; ++n) {
    const cplx u = pair.u.amplitudes[n + n_max];
    const cplx w = pair.v.amplitudes[n + n_max];
    r.rows.push_back({std::to_string(n), fmt17(u.real()), fmt17(u.imag()), fmt17(std::abs(u)),
                      fmt17(w.real()), fmt17(w.imag()), fmt17(std::abs(w))});
  }
  const double rtol = p.num("residual_tol", 1e-2);
  r.summary["stalled"] = pair.stalled;
  r.summary["iterations"] = pair.iterations;
  r.summary["conj_residual"] = pair.conj_residual;
  r.summary["rho_achieved"] = pair.rho_achieved;
  ojson coh;
  coh["residual"] = sol.residual;
  coh["modes"] = sol.modes;
  coh["min_divisor"] = sol.min_divisor;
  r.summary["cohomology"] = coh;
  const auto wave = [&](const BlochWave& w) {
    ojson o;
    o["phase"] = w.phase;
    o["residual"] = checked(w.residual, rtol, w.residual < rtol);
    o["decay_rate"] = w.decay.rate;
    o["decay_r2"] = w.decay.r2;
    o["ipr"] = w.decay.ipr;
    return o;
  };
  r.summary["u"] = wave(pair.u);
  r.summary["v"] = wave(pair.v);
  r.x_label = "n";
  r.y_label = "|u|";
  for (long n = -n_max; n <= n_max; ++n) {
    r.xs.push_back((double)n);
    r.ys.push_back(std::abs(pair.u.amplitudes[n + n_max]));
  }
  return r;
}

}  // namespace tasks

inline TaskResult execute_task(const RunConfig& cfg, const CacheSettings& cache);

// ---------------------------------------------------------------------------
// Payloads and the run cache. A payload is the full byte content of the
// emitted files; cached replays reuse those bytes verbatim.

struct Payload {
  std::string csv, summary, svg;
  bool cache_hit = false;
};

namespace detail {

inline std::filesystem::path cache_file(const CacheSettings& cache, const std::string& hash,
                                        const char* ext) {
  return std::filesystem::path(cache.dir) / ("run-" + hash + ext);
}

}  // namespace detail

inline Payload load_or_compute(const RunConfig& cfg, const CacheSettings& cache) {
  const std::string hash = config_hash(cfg);
  Payload pl;
  if (cache.enabled) {
    std::string csv, summary;
    if (detail::read_file(detail::cache_file(cache, hash, ".csv"), csv) &&
        detail::read_file(detail::cache_file(cache, hash, ".summary.json"), summary) &&
        ojson::accept(summary)) {
      pl.csv = std::move(csv);
      pl.summary = std::move(summary);
      detail::read_file(detail::cache_file(cache, hash, ".svg"), pl.svg);
      pl.cache_hit = true;
      return pl;
    }
  }
  TaskResult r = execute_task(cfg, cache);
  pl.csv = to_csv(r);
  pl.summary = dump_json(r.summary, 2) + "\n";
  pl.svg = svg_polyline(r.xs, r.ys, r.x_label, r.y_label);
  if (cache.enabled) {
    detail::write_file(detail::cache_file(cache, hash, ".csv"), pl.csv, "cache entry");
    detail::write_file(detail::cache_file(cache, hash, ".summary.json"), pl.summary,
                       "cache entry");
    if (!pl.svg.empty())
      detail::write_file(detail::cache_file(cache, hash, ".svg"), pl.svg, "cache entry");
  }
  return pl;
}

// ---------------------------------------------------------------------------
// Sweep: map a task over one numeric parameter axis. Points run on a small
// worker pool, failures are recorded and do not stop the rest, and the merge
// is in axis order regardless of completion order.

namespace tasks {

inline void flatten_summary(const ojson& s, const std::string& prefix,
                            std::vector<std::pair<std::string, std::string>>& out) {
  for (const auto& [k, v] : s.items()) {
    if (v.is_object()) {
      if (v.contains("value")) {
        const auto& val = v["value"];
        out.emplace_back(prefix + k,
                         val.is_number_float()
                             ? fmt17(val.get<double>())
                             : (val.is_null() ? std::string("nan") : val.dump()));
      } else {
        flatten_summary(v, prefix + k + ".", out);
      }
    } else if (v.is_array()) {
      continue;
    } else if (v.is_number_float()) {
      out.emplace_back(prefix + k, fmt17(v.get<double>()));
    } else if (v.is_null()) {
      out.emplace_back(prefix + k, "nan");
    } else if (v.is_string()) {
      out.emplace_back(prefix + k, v.get<std::string>());
    } else {
      out.emplace_back(prefix + k, v.dump());
    }
  }
}

inline TaskResult sweep(const RunConfig& cfg, const CacheSettings& cache) {
  Params p(cfg.params, {"task", "axis", "values", "params"}, cfg.task);
  const std::string sub = p.str_req("task");
  if (!known_task(sub) || sub == "sweep")
    config_fail("key 'params.task' must name a non-sweep task, got '" + sub + "'");
  const std::string axis = p.str_req("axis");
  if (axis.empty()) config_fail("key 'params.axis' must be non-empty");
  const auto values = p.numbers_req("values");
  const json base = p.object("params");
  if (base.contains(axis))
    config_fail("key 'params.params." + axis + "' collides with the sweep axis");

  const size_t n = values.size();
  struct Point {
    bool ok = false;
    std::string error;
    std::vector<std::pair<std::string, std::string>> flat;
  };
  std::vector<Point> pts(n);
  std::atomic<size_t> next{0}, done{0};
  std::mutex io, abort_mx;
  std::exception_ptr abort;

  const auto worker = [&]() {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= n) return;
      {
        std::lock_guard<std::mutex> lk(abort_mx);
        if (abort) return;
      }
      RunConfig pc;
      pc.task = sub;
      pc.potential = cfg.potential;
      pc.alpha = cfg.alpha;
      pc.params = base;
      pc.params[axis] = values[i];
      pc.jobs = 1;
      pc.cache_dir = cfg.cache_dir;
      pc.out = cfg.out;
      std::string status;
      try {
        Payload pl = load_or_compute(pc, cache);
        const ojson s = ojson::parse(pl.summary);
        pts[i].ok = true;
        flatten_summary(s, "", pts[i].flat);
        status = "ok";
      } catch (const Error& e) {
        if (e.code() == errc::config_error) {
          std::lock_guard<std::mutex> lk(abort_mx);
          if (!abort) abort = std::current_exception();
          return;
        }
        pts[i].error = e.what();
        status = "error";
      } catch (const std::exception& e) {
        pts[i].error = e.what();
        status = "error";
      }
      const size_t k = done.fetch_add(1) + 1;
      std::lock_guard<std::mutex> lk(io);
      std::fprintf(stderr, "[sweep] %zu/%zu %s=%s %s\n", k, n, axis.c_str(),
                   fmt17(values[i]).c_str(), status.c_str());
    }
  };

  const int jobs = std::max(1, std::min<int>(cfg.jobs, (int)n));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve((size_t)jobs);
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (abort) std::rethrow_exception(abort);

  TaskResult r;
  r.columns = {axis, "status"};
  for (const auto& pt : pts) {
    if (!pt.ok) continue;
    for (const auto& [k, v] : pt.flat) {
      (void)v;
      bool seen = false;
      for (const auto& c : r.columns) seen = seen || c == k;
      if (!seen) r.columns.push_back(k);
    }
  }
  r.columns.push_back("error");

  size_t failed = 0;
  ojson errors = ojson::array();
  for (size_t i = 0; i < n; ++i) {
    std::vector<std::string> row(r.columns.size());
    row[0] = fmt17(values[i]);
    row[1] = pts[i].ok ? "ok" : "error";
    row.back() = pts[i].error;
    for (const auto& [k, v] : pts[i].flat)
      for (size_t c = 2; c + 1 < r.columns.size(); ++c)
        if (r.columns[c] == k) row[c] = v;
    r.rows.push_back(std::move(row));
    if (!pts[i].ok) {
      ++failed;
      ojson e;
      e["value"] = values[i];
      e["message"] = pts[i].error;
      errors.push_back(e);
    }
  }
  r.summary["task"] = sub;
  r.summary["axis"] = axis;
  r.summary["points"] = (long)n;
  r.summary["ok"] = (long)(n - failed);
  r.summary["failed"] = (long)failed;
  r.summary["errors"] = errors;

  // Primary curve: the first numeric summary column against the axis.
  size_t ycol = 0;
  for (size_t c = 2; c + 1 < r.columns.size() && !ycol; ++c) {
    if (r.columns[c] == axis) continue;
    for (size_t i = 0; i < n; ++i) {
      if (!pts[i].ok) continue;
      char* end = nullptr;
      const std::string& cell = r.rows[i][c];
      if (!cell.empty()) {
        std::strtod(cell.c_str(), &end);
        if (end && *end == '\0') ycol = c;
      }
      break;
    }
  }
  if (ycol) {
    r.x_label = axis;
    r.y_label = r.columns[ycol];
    for (size_t i = 0; i < n; ++i) {
      if (!pts[i].ok || r.rows[i][ycol].empty()) continue;
      r.xs.push_back(values[i]);
      r.ys.push_back(std::strtod(r.rows[i][ycol].c_str(), nullptr));
    }
  }
  return r;
}

}  // namespace tasks

inline TaskResult execute_task(const RunConfig& cfg, const CacheSettings& cache) {
  if (cfg.task == "freq") return tasks::freq(cfg, cache);
  if (cfg.task == "lyap") return tasks::lyap(cfg, cache);
  if (cfg.task == "accel") return tasks::accel(cfg, cache);
  if (cfg.task == "classify") return tasks::classify_task(cfg, cache);
  if (cfg.task == "ids") return tasks::ids_task(cfg, cache);
  if (cfg.task == "holder") return tasks::holder(cfg, cache);
  if (cfg.task == "localize") return tasks::localize(cfg, cache);
  if (cfg.task == "dual-spectrum") return tasks::dual_spectrum(cfg, cache);
  if (cfg.task == "jensen") return tasks::jensen(cfg, cache);
  if (cfg.task == "haro-puig") return tasks::haro_puig(cfg, cache);
  if (cfg.task == "dominated") return tasks::dominated(cfg, cache);
  if (cfg.task == "center") return tasks::center(cfg, cache);
  if (cfg.task == "rotation") return tasks::rotation(cfg, cache);
  if (cfg.task == "duality-check") return tasks::duality_check(cfg, cache);
  if (cfg.task == "truncation-study") return tasks::truncation_study(cfg, cache);
  if (cfg.task == "bloch") return tasks::bloch(cfg, cache);
  if (cfg.task == "sweep") return tasks::sweep(cfg, cache);
  config_fail("key 'task' names no known task: '" + cfg.task + "'");
}

// ---------------------------------------------------------------------------
// The run operation: dispatch, cache, emit files, envelope.

struct RunResult {
  std::string config_hash;
  bool cache_hit = false;
  int exit_hint = 0;  // 0 clean, 4 when a sweep recorded failed points
  double wall_time_s = 0.0;
  std::string csv_path, json_path, svg_path;
  ojson envelope;
};

inline RunResult run(const RunConfig& cfg, bool no_cache = false) {
  const auto t0 = std::chrono::steady_clock::now();
  RunResult res;
  res.config_hash = config_hash(cfg);

  CacheSettings cache{cfg.cache_dir, !no_cache};
  if (cache.enabled) {
    std::error_code ec;
    std::filesystem::create_directories(cache.dir, ec);
    if (ec || !std::filesystem::is_directory(cache.dir))
      config_fail("cache_dir '" + cache.dir + "' is not writable");
  }

  Payload pl;
  try {
    pl = load_or_compute(cfg, cache);
  } catch (const Error& e) {
    if (e.code() == errc::config_error) throw;
    fail(errc::task_error, "task '" + cfg.task + "' failed: " + e.what());
  }
  res.cache_hit = pl.cache_hit;

  res.csv_path = cfg.out + ".csv";
  res.json_path = cfg.out + ".json";
  if (!pl.svg.empty()) res.svg_path = cfg.out + ".svg";

  const ojson summary = ojson::parse(pl.summary);
  if (cfg.task == "sweep" && summary.contains("failed") &&
      summary["failed"].get<long>() > 0)
    res.exit_hint = 4;

  std::vector<std::string> columns;
  {
    const size_t eol = pl.csv.find('\n');
    std::stringstream head(pl.csv.substr(0, eol == std::string::npos ? pl.csv.size() : eol));
    std::string cell;
    while (std::getline(head, cell, ',')) columns.push_back(cell);
  }
  size_t rows = 0;
  for (char c : pl.csv)
    if (c == '\n') ++rows;
  if (rows > 0) --rows;

  res.wall_time_s =
      std::chrono::duration_cast<std::chrono::duration<double>>(std::chrono::steady_clock::now() -
                                                                t0)
          .count();

  ojson env;
  env["tool"] = kToolName;
  env["version"] = kToolVersion;
  env["task"] = cfg.task;
  env["config_hash"] = res.config_hash;
  env["input_hash"] = res.config_hash;
  env["config"] = canonical_config(cfg);
  env["wall_time_s"] = res.wall_time_s;
  ojson rows_ref;
  rows_ref["path"] = res.csv_path;
  rows_ref["count"] = (long)rows;
  ojson cols = ojson::array();
  for (const auto& c : columns) cols.push_back(c);
  rows_ref["columns"] = cols;
  env["rows"] = rows_ref;
  env["plot"] = res.svg_path.empty() ? ojson() : ojson(res.svg_path);
  env["summary"] = summary;
  res.envelope = env;

  detail::write_file(res.csv_path, pl.csv, "output");
  if (!res.svg_path.empty()) detail::write_file(res.svg_path, pl.svg, "output");
  detail::write_file(res.json_path, dump_json(env, 2) + "\n", "output");
  return res;
}

}  // namespace qplab
