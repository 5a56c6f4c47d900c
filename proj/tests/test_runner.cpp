#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "qplab/runner.hpp"

namespace qplab {
namespace {

namespace fs = std::filesystem;

json amo_potential() {
  return json::parse(R"({"type":"trig","coeffs":[[1,2,0],[-1,2,0]]})");
}

// Fresh scratch directory per test; outputs and caches both live inside.
fs::path scratch(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "qplab-runner-tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// wall_time_s is the one envelope field allowed to differ between replays.
std::string scrub_wall_time(std::string text) {
  auto pos = text.find("\"wall_time_s\"");
  if (pos == std::string::npos) return text;
  auto end = text.find('\n', pos);
  text.erase(pos, end - pos);
  return text;
}

TEST(Config, CanonicalFormIsIdempotent) {
  json raw;
  raw["task"] = "ids";
  raw["alpha"] = "golden";
  raw["potential"] = amo_potential();
  raw["params"] = json::parse(R"({"E":2,"size":512})");
  RunConfig cfg = parse_config(raw);
  json canon = canonical_config(cfg);
  RunConfig cfg2 = parse_config(canon);
  EXPECT_EQ(dump_json(canon, -1), dump_json(canonical_config(cfg2), -1));
  EXPECT_EQ(cfg.out, "ids");
  EXPECT_EQ(cfg.jobs, 1);
  EXPECT_EQ(cfg.cache_dir, ".qplab-cache");
}

TEST(Config, EquivalentSpellingsHashIdentically) {
  json a, b;
  a["task"] = b["task"] = "lyap";
  a["alpha"] = "golden";
  b["alpha"] = "golden";
  a["potential"] = json::parse(R"({"type":"trig","coeffs":[[1,2,0],[-1,2,0]]})");
  b["potential"] = json::parse(R"({"type":"trig","coeffs":[[-1,2.0,0.0],[1,1,0],[1,1,0]]})");
  a["params"] = json::parse(R"({"E":2})");
  b["params"] = json::parse(R"({"E":2.0})");
  EXPECT_EQ(config_hash(parse_config(a)), config_hash(parse_config(b)));
}

TEST(Config, JobsAndPlacementStayOutOfTheContentHash) {
  json a;
  a["task"] = "lyap";
  a["alpha"] = "golden";
  a["potential"] = amo_potential();
  a["params"] = json::parse(R"({"E":2})");
  json b = a;
  b["jobs"] = 8;
  b["out"] = "elsewhere";
  b["cache_dir"] = "othercache";
  EXPECT_EQ(config_hash(parse_config(a)), config_hash(parse_config(b)));
}

TEST(Config, UnknownKeysAreRejectedByName) {
  json raw;
  raw["task"] = "ids";
  raw["alpha"] = "golden";
  raw["potential"] = amo_potential();
  raw["frobnicate"] = 1;
  try {
    parse_config(raw);
    FAIL() << "expected rejection";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::config_error);
    EXPECT_NE(std::string(e.what()).find("frobnicate"), std::string::npos);
  }
}

TEST(Config, UnknownParamKeyNamesTaskAndKey) {
  json raw;
  raw["task"] = "ids";
  raw["alpha"] = "golden";
  raw["potential"] = amo_potential();
  raw["params"] = json::parse(R"({"E":0,"siize":512})");
  RunConfig cfg = parse_config(raw);
  try {
    execute_task(cfg, {"", false});
    FAIL() << "expected rejection";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::config_error);
    EXPECT_NE(std::string(e.what()).find("params.siize"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("'ids'"), std::string::npos);
  }
}

TEST(Config, MalformedPotentialNamesTheOffendingKey) {
  json raw;
  raw["task"] = "ids";
  raw["alpha"] = "golden";
  raw["potential"] = json::parse(R"({"type":"blorp"})");
  try {
    parse_config(raw);
    FAIL() << "expected rejection";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::config_error);
    EXPECT_NE(std::string(e.what()).find("potential.type"), std::string::npos);
  }

  raw["potential"] = json::parse(R"({"type":"trig","coeffs":[[1,1,0],[-1,0,1]]})");
  try {
    parse_config(raw);
    FAIL() << "expected reality rejection";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::config_error);
    EXPECT_NE(std::string(e.what()).find("potential.coeffs"), std::string::npos);
  }
}

TEST(Config, TaskMustMatchSubcommand) {
  json raw;
  raw["task"] = "ids";
  raw["alpha"] = "golden";
  raw["potential"] = amo_potential();
  EXPECT_THROW(parse_config(raw, "lyap"), Error);
  EXPECT_NO_THROW(parse_config(raw, "ids"));
}

TEST(Serialization, SeventeenDigitsRoundTripThroughText) {
  const double x = 0.1 + 0.2;
  EXPECT_EQ(std::stod(fmt17(x)), x);
  ojson j;
  j["x"] = x;
  j["third"] = 1.0 / 3.0;
  const std::string text = dump_json(j, 2);
  const ojson back = ojson::parse(text);
  EXPECT_EQ(back["x"].get<double>(), x);
  EXPECT_EQ(dump_json(back, 2), text);
}

TEST(FrameCache, BlobRoundTripsBitExactly) {
  CenterOptions opt;
  opt.grid = 256;
  CenterFrame f = center_frame(amo(2.0), golden_frequency().alpha, 0.5, 0.0, opt);
  CenterFrame g;
  ASSERT_TRUE(frame_from_blob(frame_to_blob(f), g));
  EXPECT_EQ(f.v.degree(), g.v.degree());
  for (long k = -f.v.degree(); k <= f.v.degree(); ++k) EXPECT_EQ(f.v.at(k), g.v.at(k));
  EXPECT_EQ(f.alpha, g.alpha);
  EXPECT_EQ(f.energy, g.energy);
  EXPECT_EQ(f.d, g.d);
  ASSERT_EQ(f.phi.size(), g.phi.size());
  for (long j = 0; j < f.phi.size(); ++j) EXPECT_EQ(f.phi[j], g.phi[j]);
  ASSERT_EQ(f.C_values.size(), g.C_values.size());
  for (size_t j = 0; j < f.C_values.size(); ++j)
    EXPECT_EQ((f.C_values[j] - g.C_values[j]).norm(), 0.0);
  EXPECT_EQ(f.mean_phi, g.mean_phi);
  EXPECT_EQ(f.winding, g.winding);
  EXPECT_EQ(f.frame_residual, g.frame_residual);
  EXPECT_EQ(f.strip_radius, g.strip_radius);
  EXPECT_EQ(f.horizon, g.horizon);

  std::string blob = frame_to_blob(f);
  blob.resize(blob.size() / 2);
  CenterFrame h;
  EXPECT_FALSE(frame_from_blob(blob, h));
}

RunConfig small_lyap_config(const fs::path& dir) {
  json raw;
  raw["task"] = "lyap";
  raw["alpha"] = "golden";
  raw["potential"] = amo_potential();
  raw["params"] = json::parse(R"({"E":0.5,"horizon":4096,"segments":3,"tol":0.001})");
  raw["cache_dir"] = (dir / "cache").string();
  raw["out"] = (dir / "lyap").string();
  return parse_config(raw);
}

TEST(RunCache, ReplayAndFreshAreBitwiseEqual) {
  const fs::path dir = scratch("runcache");
  RunConfig cfg = small_lyap_config(dir);

  auto first = run(cfg);
  EXPECT_FALSE(first.cache_hit);
  const std::string csv1 = slurp(first.csv_path);
  const std::string json1 = slurp(first.json_path);
  ASSERT_FALSE(csv1.empty());

  auto second = run(cfg);
  EXPECT_TRUE(second.cache_hit);
  EXPECT_EQ(slurp(second.csv_path), csv1);
  EXPECT_EQ(scrub_wall_time(slurp(second.json_path)), scrub_wall_time(json1));

  cfg.out = (dir / "fresh").string();
  auto third = run(cfg, /*no_cache=*/true);
  EXPECT_FALSE(third.cache_hit);
  EXPECT_EQ(slurp(third.csv_path), csv1);
  EXPECT_EQ(first.config_hash, third.config_hash);
}

TEST(RunCache, EnvelopeCarriesHashColumnsAndTolerances) {
  const fs::path dir = scratch("envelope");
  RunConfig cfg = small_lyap_config(dir);
  auto res = run(cfg);
  const ojson& env = res.envelope;
  EXPECT_EQ(env["config_hash"], env["input_hash"]);
  EXPECT_EQ(env["config_hash"].get<std::string>(), res.config_hash);
  EXPECT_EQ(env["rows"]["count"].get<long>(), 1);
  EXPECT_EQ(env["rows"]["columns"][0], "E");
  EXPECT_TRUE(env["summary"]["L"].contains("stderr"));
  // A checked quantity always rides with its threshold.
  json raw;
  raw["task"] = "haro-puig";
  raw["alpha"] = "golden";
  raw["potential"] = amo_potential();
  raw["params"] = json::parse(R"({"E":6.0,"horizon":4096,"segments":3,"tol":0.001})");
  raw["cache_dir"] = (dir / "cache").string();
  raw["out"] = (dir / "hp").string();
  auto hp = run(parse_config(raw));
  EXPECT_TRUE(hp.envelope["summary"]["residual"].contains("tol"));
  EXPECT_TRUE(hp.envelope["summary"]["residual"].contains("pass"));
}

TEST(Sweep, MergesInAxisOrderRegardlessOfJobs) {
  const fs::path dir = scratch("sweepjobs");
  json raw;
  raw["task"] = "sweep";
  raw["alpha"] = "golden";
  raw["potential"] = amo_potential();
  raw["params"] = json::parse(
      R"({"task":"ids","axis":"E","values":[1.5,0.0,-2.0],"params":{"size":256}})");
  raw["cache_dir"] = (dir / "cache").string();
  raw["out"] = (dir / "s1").string();
  RunConfig cfg = parse_config(raw);
  auto serial = run(cfg, /*no_cache=*/true);
  cfg.jobs = 3;
  cfg.out = (dir / "s2").string();
  auto parallel = run(cfg, /*no_cache=*/true);
  EXPECT_EQ(slurp(serial.csv_path), slurp(parallel.csv_path));

  const std::string csv = slurp(serial.csv_path);
  const size_t r1 = csv.find("\n1.5,");
  const size_t r2 = csv.find("\n0,");
  const size_t r3 = csv.find("\n-2,");
  ASSERT_NE(r1, std::string::npos);
  ASSERT_NE(r2, std::string::npos);
  ASSERT_NE(r3, std::string::npos);
  EXPECT_LT(r1, r2);
  EXPECT_LT(r2, r3);
  EXPECT_EQ(serial.exit_hint, 0);
}

TEST(Sweep, FailedPointsAreRecordedAndTheRestContinues) {
  const fs::path dir = scratch("sweepfail");
  json raw;
  raw["task"] = "sweep";
  raw["alpha"] = "golden";
  raw["potential"] = amo_potential();
  raw["params"] = json::parse(
      R"({"task":"dominated","axis":"k","values":[1,7],"params":{"E":5.0,"horizon":512}})");
  raw["cache_dir"] = (dir / "cache").string();
  raw["out"] = (dir / "sw").string();
  auto res = run(parse_config(raw));
  EXPECT_EQ(res.exit_hint, 4);
  EXPECT_EQ(res.envelope["summary"]["ok"].get<long>(), 1);
  EXPECT_EQ(res.envelope["summary"]["failed"].get<long>(), 1);
  const std::string msg = res.envelope["summary"]["errors"][0]["message"].get<std::string>();
  EXPECT_NE(msg.find("BadInput"), std::string::npos);
  const std::string csv = slurp(res.csv_path);
  EXPECT_NE(csv.find("1,ok,"), std::string::npos);
  EXPECT_NE(csv.find("7,error,"), std::string::npos);
}

TEST(Sweep, SubTaskConfigErrorsAbortInsteadOfBeingRecorded) {
  const fs::path dir = scratch("sweepabort");
  json raw;
  raw["task"] = "sweep";
  raw["alpha"] = "golden";
  raw["potential"] = amo_potential();
  raw["params"] = json::parse(
      R"({"task":"ids","axis":"E","values":[0.0],"params":{"siize":256}})");
  raw["cache_dir"] = (dir / "cache").string();
  raw["out"] = (dir / "sw").string();
  try {
    run(parse_config(raw));
    FAIL() << "expected config rejection";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::config_error);
    EXPECT_NE(std::string(e.what()).find("params.siize"), std::string::npos);
  }
}

TEST(Sweep, SingleValueAxisMatchesDirectRun) {
  const fs::path dir = scratch("sweepone");
  json raw;
  raw["task"] = "sweep";
  raw["alpha"] = "golden";
  raw["potential"] = amo_potential();
  raw["params"] = json::parse(
      R"({"task":"ids","axis":"E","values":[0.0],"params":{"size":256}})");
  raw["cache_dir"] = (dir / "cache").string();
  raw["out"] = (dir / "sw").string();
  auto res = run(parse_config(raw));
  EXPECT_EQ(res.exit_hint, 0);
  EXPECT_EQ(res.envelope["rows"]["count"].get<long>(), 1);

  json direct;
  direct["task"] = "ids";
  direct["alpha"] = "golden";
  direct["potential"] = amo_potential();
  direct["params"] = json::parse(R"({"E":0.0,"size":256})");
  direct["cache_dir"] = (dir / "cache").string();
  direct["out"] = (dir / "direct").string();
  auto dres = run(parse_config(direct));
  // The sweep populated the run cache with exactly this point.
  EXPECT_TRUE(dres.cache_hit);
  const double n_direct = dres.envelope["summary"]["N"]["value"].get<double>();
  const std::string cell = slurp(res.csv_path);
  EXPECT_NE(cell.find(fmt17(n_direct)), std::string::npos);
}

TEST(Run, ModuleErrorsAreWrappedAsTaskErrorsVerbatim) {
  const fs::path dir = scratch("taskerror");
  json raw;
  raw["task"] = "bloch";
  raw["alpha"] = "golden";
  raw["potential"] = amo_potential();
  raw["params"] = json::parse(R"({"E":0.0,"grid":512,"n_max":128,"gamma":0.9})");
  raw["cache_dir"] = (dir / "cache").string();
  raw["out"] = (dir / "bl").string();
  try {
    run(parse_config(raw));
    FAIL() << "expected task error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::task_error);
    EXPECT_NE(std::string(e.what()).find("WindowRejected"), std::string::npos);
  }
}

TEST(Run, PlotIsAPolylineOfThePrimaryCurve) {
  const fs::path dir = scratch("plot");
  json raw;
  raw["task"] = "freq";
  raw["alpha"] = "golden";
  raw["params"] = json::parse(R"({"depth":12})");
  raw["cache_dir"] = (dir / "cache").string();
  raw["out"] = (dir / "fr").string();
  auto res = run(parse_config(raw));
  ASSERT_FALSE(res.svg_path.empty());
  const std::string svg = slurp(res.svg_path);
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("<polyline"), std::string::npos);
  EXPECT_EQ(res.envelope["summary"]["beta_estimate"].get<double>(),
            golden_frequency(12).beta_estimate);
}

}  // namespace
}  // namespace qplab
