#include <cstdio>
#include <fstream>
#include <string>

#include "doctest.h"
#include "qfbsde.h"

namespace {

void write_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  out << body;
}

const char* kMinimal = R"({
  "scenario": "capi",
  "grid": {"T": 1.0, "N": 16},
  "paths": 1024,
  "seed": 7,
  "martingale": {"kind": "brownian", "d": 1},
  "forward": {"sigma": {"preset": "constant", "value": 1.0}},
  "driver": {"preset": "zero"},
  "terminal": {"preset": "constant", "value": 1.0},
  "solver": {"kind": "lipschitz", "tol": 1e-8, "max_iter": 10}
})";

}  // namespace

TEST_CASE("run returns a manifest and status zero") {
  write_file("/tmp/qfbsde_capi.json", kMinimal);
  qfbsde_result* res = nullptr;
  const qfbsde_status st =
      qfbsde_run("/tmp/qfbsde_capi.json", "/tmp/qfbsde_capi_out", -1, 1, &res);
  CHECK(st == QFBSDE_OK);
  REQUIRE(res);
  CHECK(std::string(qfbsde_result_manifest_path(res)) ==
        "/tmp/qfbsde_capi_out/manifest.json");
  CHECK(std::string(qfbsde_result_message(res)).find("config_hash") !=
        std::string::npos);
  qfbsde_result_free(res);
}

TEST_CASE("validation failures map to status 2") {
  qfbsde_result* res = nullptr;
  CHECK(qfbsde_run("/tmp/no_such_config.json", nullptr, -1, 0, &res) ==
        QFBSDE_ERR_VALIDATION);
  qfbsde_result_free(res);

  write_file("/tmp/qfbsde_capi_bad.json", "{broken");
  CHECK(qfbsde_validate("/tmp/qfbsde_capi_bad.json", &res) ==
        QFBSDE_ERR_VALIDATION);
  qfbsde_result_free(res);

  CHECK(qfbsde_run(nullptr, nullptr, -1, 0, &res) == QFBSDE_ERR_VALIDATION);
  qfbsde_result_free(res);
}

TEST_CASE("validate reports issue lists") {
  write_file("/tmp/qfbsde_capi_warn.json", R"({
    "scenario": "warn",
    "grid": {"T": 1.0, "N": 8},
    "paths": 256,
    "terminal": {"preset": "identity"}
  })");
  qfbsde_result* res = nullptr;
  CHECK(qfbsde_validate("/tmp/qfbsde_capi_warn.json", &res) == QFBSDE_OK);
  REQUIRE(res);
  const std::string msg = qfbsde_result_message(res);
  CHECK(msg.find("warning") != std::string::npos);
  qfbsde_result_free(res);
}

TEST_CASE("solver failures map to status 3") {
  write_file("/tmp/qfbsde_capi_diverge.json", R"({
    "scenario": "diverge",
    "grid": {"T": 1.0, "N": 8},
    "paths": 512,
    "driver": {"preset": "linear", "rate": 80.0},
    "terminal": {"preset": "constant", "value": 1.0},
    "solver": {"kind": "lipschitz", "tol": 1e-12, "max_iter": 2}
  })");
  qfbsde_result* res = nullptr;
  CHECK(qfbsde_run("/tmp/qfbsde_capi_diverge.json", "/tmp/qfbsde_capi_div", -1, 1,
                   &res) == QFBSDE_ERR_SOLVER);
  qfbsde_result_free(res);
}

TEST_CASE("capacity overruns map to status 4") {
  write_file("/tmp/qfbsde_capi_huge.json", R"({
    "scenario": "huge",
    "grid": {"T": 1.0, "N": 512},
    "paths": 100000000,
    "terminal": {"preset": "constant", "value": 1.0}
  })");
  qfbsde_result* res = nullptr;
  CHECK(qfbsde_run("/tmp/qfbsde_capi_huge.json", "/tmp/qfbsde_capi_huge", -1, 1,
                   &res) == QFBSDE_ERR_CAPACITY);
  qfbsde_result_free(res);
}

TEST_CASE("plotdata round trip and manifest errors") {
  write_file("/tmp/qfbsde_capi.json", kMinimal);
  qfbsde_result* res = nullptr;
  REQUIRE(qfbsde_run("/tmp/qfbsde_capi.json", "/tmp/qfbsde_capi_out2", -1, 1,
                     &res) == QFBSDE_OK);
  const std::string manifest = qfbsde_result_manifest_path(res);
  qfbsde_result_free(res);
  CHECK(qfbsde_plotdata(manifest.c_str(), "/tmp/qfbsde_capi_out2/plot.csv", &res) ==
        QFBSDE_OK);
  qfbsde_result_free(res);
  CHECK(qfbsde_plotdata("/tmp/missing_manifest.json", "/tmp/p.csv", &res) ==
        QFBSDE_ERR_VALIDATION);
  qfbsde_result_free(res);
}

TEST_CASE("version string is present") {
  CHECK(std::string(qfbsde_version()).size() >= 5);
}
