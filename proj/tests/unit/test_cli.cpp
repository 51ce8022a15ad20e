// SPDX-License-Identifier: Apache-2.0
#include "g2v/cli/commands.hpp"
#include "g2v/cli/config.hpp"
#include "g2v/error.hpp"

#include <doctest.h>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace g2v;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code;
  std::string out, err;
};

CliRun invoke(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("g2v_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("config text formats") {
    const auto j = cli::parse_config_text("{\"lr\": 0.01, \"mixer\": \"none\"}");
    CHECK(j["lr"] == 0.01);
    const auto kv = cli::parse_config_text("# comment\nlr = 0.01  # trailing\n\nmixer=none\n");
    CHECK(kv["lr"] == "0.01");
    CHECK(kv["mixer"] == "none");
    CHECK_THROWS_AS(cli::parse_config_text("lr = 1\nlr = 2\n"), ConfigError);
    CHECK_THROWS_AS(cli::parse_config_text("{\"a\": {\"b\": 1}}"), ConfigError);
    CHECK_THROWS_AS(cli::parse_config_text("just words\n"), ConfigError);
    CHECK_THROWS_AS(cli::read_config_file("/nonexistent/g2v.cfg"), ConfigError);
  }

  TEST_CASE("edit distance and suggestions") {
    CHECK(cli::edit_distance("kitten", "sitting") == 3);
    CHECK(cli::edit_distance("", "abc") == 3);
    const auto& schema = cli::schema_for("train-vamp");
    CHECK(cli::suggest_key("batchsize", schema) == "batch_size");
    CHECK(cli::suggest_key("completely_unrelated_words", schema).empty());
  }

  TEST_CASE("validation messages and defaults") {
    const auto& schema = cli::schema_for("train-vamp");
    CHECK_THROWS_WITH(cli::validate_config({{"archive", "a"}, {"batchsize", "10"}}, schema),
                      "unknown config key 'batchsize' (did you mean 'batch_size'?)");
    CHECK_THROWS_WITH(cli::validate_config({{"archive", "a"}, {"batch_size", "abc"}}, schema),
                      "type mismatch for 'batch_size': expected integer, got \"abc\"");
    CHECK_THROWS_AS(cli::validate_config(nlohmann::json::object(), schema), ConfigError);
    const auto cfg = cli::validate_config({{"archive", "a"}, {"lr", "1e-3"}}, schema);
    CHECK(cfg.get_float("lr") == 1e-3);
    CHECK(cfg.get_size("batch_size") == 5000);
    std::ostringstream echo;
    cli::echo_config(cfg, schema, echo);
    CHECK(echo.str().find("  batch_size = 5000  (default)") != std::string::npos);
    CHECK(echo.str().find("  lr = 0.001\n") != std::string::npos);
  }

  TEST_CASE("every command has a schema") {
    for (const auto& name : cli::command_names()) CHECK_FALSE(cli::schema_for(name).empty());
    CHECK_THROWS(cli::schema_for("dance"));
  }

  TEST_CASE("exit codes") {
    CHECK(invoke({}).code == 1);
    CHECK(invoke({"dance"}).code == 1);
    const auto dir = scratch("codes");
    const auto missing = invoke({"featurize", "--set", "trajectory=/nonexistent.xyz", "--set", "topology=/nonexistent.top",
                              "--set", "out_dir=" + dir.string()});
    CHECK(missing.code == 2);
    CHECK(missing.err.find("input not found for 'trajectory'") != std::string::npos);
    const auto typo = invoke({"train-vamp", "--set", "archive=x", "--set", "batchsize=3"});
    CHECK(typo.code == 1);
    CHECK(typo.err.find("did you mean 'batch_size'") != std::string::npos);
    const auto lag = invoke({"make-toy", "--set", "n_frames=1000", "--set", "out_dir=" + dir.string()});
    REQUIRE(lag.code == 0);
    const auto bad_lag = invoke({"analyze", "msm", "--set", "labels=" + (dir / "toy_labels.txt").string(), "--set",
                              "lag_ns=0.3", "--set", "frame_interval=0.2", "--set", "out_dir=" + dir.string()});
    CHECK(bad_lag.code == 1);
    CHECK(bad_lag.err.find("non-integral lag") != std::string::npos);
    fs::remove_all(dir);
  }

  TEST_CASE("toy to pmf pipeline writes outputs and manifests") {
    const auto dir = scratch("pipe");
    const std::string od = "out_dir=" + dir.string();
    REQUIRE(invoke({"make-toy", "--seed", "3", "--set", "n_frames=1000", "--set", od}).code == 0);
    const auto feat = invoke({"featurize", "--set", "trajectory=" + (dir / "toy.xyz").string(), "--set",
                           "topology=" + (dir / "toy.top").string(), "--set", "features=ca_dihedrals", "--set", od});
    REQUIRE(feat.code == 0);
    const auto pmf = invoke({"analyze", "pmf", "--set", "input=" + (dir / "features.g2v").string(), "--set", "bins=10",
                          "--set", od});
    REQUIRE(pmf.code == 0);
    CHECK(fs::exists(dir / "pmf.txt"));
    std::ifstream in(dir / "featurize.manifest.json");
    const auto m = nlohmann::json::parse(in);
    CHECK(m["command"] == "featurize");
    CHECK(m["seed"] == 0);
    CHECK(m["inputs"].size() == 2);
    CHECK(m["outputs"][0]["blob"].get<std::string>().size() == 40);
    std::ifstream in2(dir / "analyze-pmf.manifest.json");
    CHECK(nlohmann::json::parse(in2)["command"] == "analyze pmf");
    fs::remove_all(dir);
  }
}
