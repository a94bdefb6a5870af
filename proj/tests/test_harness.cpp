#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "neuropgm/cli.hpp"
#include "neuropgm/config.hpp"
#include "neuropgm/error.hpp"
#include "neuropgm/io.hpp"
#include "neuropgm/metrics.hpp"
#include "neuropgm/random.hpp"
#include "neuropgm/report.hpp"

using namespace neuropgm;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path_ = fs::temp_directory_path() / (std::string("neuropgm_") + info->test_suite_name() + "_" + info->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::Usage;
}

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

int run(const std::vector<std::string>& args, std::string* out = nullptr, std::string* err = nullptr) {
  std::ostringstream o, e;
  const int rc = cli_main(args, o, e);
  if (out) *out = o.str();
  if (err) *err = e.str();
  return rc;
}

}  // namespace

TEST(F64Mat, RoundtripIsBitIdentical) {
  TempDir dir;
  Rng g(1, "io");
  const Matrix M = g.normal_matrix(7, 5);
  write_f64mat(dir / "m.f64", M);
  const Matrix back = read_f64mat(dir / "m.f64");
  ASSERT_EQ(back.rows(), 7);
  ASSERT_EQ(back.cols(), 5);
  EXPECT_EQ(std::memcmp(back.data(), M.data(), sizeof(double) * 35), 0);
  EXPECT_EQ(fs::file_size(dir / "m.f64"), 4u + 4 + 4 + 16 + 35 * 8);
}

TEST(F64Mat, HeaderLayoutAndRowMajorPayload) {
  TempDir dir;
  Matrix M(2, 3);
  M << 1, 2, 3, 4, 5, 6;
  write_f64mat(dir / "m.f64", M);
  std::ifstream in(dir / "m.f64", std::ios::binary);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_EQ(buf.substr(0, 4), "PGMF");
  std::uint32_t version, ndim;
  std::uint64_t d0, d1;
  double second;
  std::memcpy(&version, buf.data() + 4, 4);
  std::memcpy(&ndim, buf.data() + 8, 4);
  std::memcpy(&d0, buf.data() + 12, 8);
  std::memcpy(&d1, buf.data() + 20, 8);
  std::memcpy(&second, buf.data() + 36, 8);
  EXPECT_EQ(version, 1u);
  EXPECT_EQ(ndim, 2u);
  EXPECT_EQ(d0, 2u);
  EXPECT_EQ(d1, 3u);
  EXPECT_EQ(second, 2.0);
}

TEST(F64Mat, TruncatedPayloadReportsByteCounts) {
  TempDir dir;
  write_f64mat(dir / "m.f64", Matrix::Ones(3, 3));
  fs::resize_file(dir / "m.f64", 28 + 50);
  EXPECT_EQ(code_of([&] { read_f64mat(dir / "m.f64"); }), ErrorCode::TruncatedFile);
  const std::string msg = message_of([&] { read_f64mat(dir / "m.f64"); });
  EXPECT_NE(msg.find("72"), std::string::npos) << msg;
  EXPECT_NE(msg.find("50"), std::string::npos) << msg;
}

TEST(F64Mat, BadMagic) {
  TempDir dir;
  write_text_file(dir / "m.f64", "NOPE0000000000000000");
  EXPECT_EQ(code_of([&] { read_f64mat(dir / "m.f64"); }), ErrorCode::BadMagic);
}

TEST(Csv, HeaderedTwoByTwo) {
  const Matrix M = parse_csv("a,b\n1,2\n3,4\n");
  Matrix expect(2, 2);
  expect << 1, 2, 3, 4;
  EXPECT_TRUE(M == expect);
}

TEST(Csv, RoundtripThroughExtensionDispatch) {
  TempDir dir;
  Rng g(2, "csv");
  const Matrix M = g.normal_matrix(4, 3);
  write_matrix(dir / "m.csv", M);
  EXPECT_TRUE(read_matrix(dir / "m.csv") == M);
}

TEST(Csv, NonNumericCellNamesRow) {
  EXPECT_EQ(code_of([] { parse_csv("a,b\n1,2\n3,x\n"); }), ErrorCode::NonNumericCell);
  const std::string msg = message_of([] { parse_csv("a,b\n1,2\n3,x\n"); });
  EXPECT_NE(msg.find("row 3"), std::string::npos) << msg;
}

TEST(AlignedScore, RotationIsRemoved) {
  Rng g(3, "align");
  const Matrix S = g.normal_matrix(4, 200);
  const Matrix Q = thin_orthonormal_basis(g.normal_matrix(4, 4));
  EXPECT_NEAR(aligned_recovery_score(S, Q * S), 1.0, 1e-8);
}

TEST(AlignedScore, IdenticalIsExactlyOne) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng g(seed, "align-eq");
    const Matrix S = g.normal_matrix(4, 100);
    EXPECT_EQ(aligned_recovery_score(S, S), 1.0);
  }
}

TEST(AlignedScore, IndependentIsNearZero) {
  Rng g(4, "align-ind");
  const Matrix A = g.normal_matrix(3, 10000), B = g.normal_matrix(3, 10000);
  const double s = aligned_recovery_score(A, B);
  EXPECT_LT(s, 0.05);
  EXPECT_GE(s, -1.0);
}

TEST(Assignment, MatchesBruteForce) {
  Rng g(5, "hung");
  for (int n = 1; n <= 6; ++n) {
    const Matrix C = g.normal_matrix(n, n).cwiseAbs();
    const std::vector<int> a = min_cost_assignment(C);
    double got = 0.0;
    for (int i = 0; i < n; ++i) got += C(i, a[i]);
    std::vector<int> p(n);
    std::iota(p.begin(), p.end(), 0);
    double best = 1e300;
    do {
      double c = 0.0;
      for (int i = 0; i < n; ++i) c += C(i, p[i]);
      best = std::min(best, c);
    } while (std::next_permutation(p.begin(), p.end()));
    EXPECT_NEAR(got, best, 1e-12) << n;
  }
}

TEST(MatchedCenterError, IdenticalAndPermuted) {
  Rng g(6, "centers");
  const Matrix C = g.normal_matrix(5, 3);
  EXPECT_EQ(matched_center_error(C, C), 0.0);
  Eigen::PermutationMatrix<Eigen::Dynamic> P(5);
  P.indices() << 3, 0, 4, 1, 2;
  EXPECT_EQ(matched_center_error(C, P * C), 0.0);
}

TEST(MatchedCenterError, MatchesBruteForce) {
  Rng g(7, "centers-bf");
  for (int K = 2; K <= 6; ++K) {
    const Matrix A = g.normal_matrix(K, 3), B = g.normal_matrix(K, 3);
    std::vector<int> p(K);
    std::iota(p.begin(), p.end(), 0);
    double best = 1e300;
    do {
      double c = 0.0;
      for (int i = 0; i < K; ++i) c += (A.row(i) - B.row(p[i])).norm();
      best = std::min(best, c / K);
    } while (std::next_permutation(p.begin(), p.end()));
    EXPECT_NEAR(matched_center_error(A, B), best, 1e-12);
  }
}

TEST(Config, SectionAndTypes) {
  const Config c = parse_config_text("[srm]\nk = 5\n[simulate]\nsnr = 1.5\n", {});
  EXPECT_TRUE(std::holds_alternative<std::int64_t>(c.at("srm.k").value));
  EXPECT_EQ(c.get_int("srm.k", 0), 5);
  EXPECT_TRUE(std::holds_alternative<double>(c.at("simulate.snr").value));
  EXPECT_EQ(c.get_double("simulate.snr", 0.0), 1.5);
}

TEST(Config, BooleansStringsListsAndComments) {
  const Config c = parse_config_text("# header\n[x]\nflag = true ; trailing\nname = ar1\nvals = 1, 2.5, 3\n", {});
  EXPECT_TRUE(c.get_bool("x.flag", false));
  EXPECT_EQ(c.get_string("x.name", ""), "ar1");
  EXPECT_EQ(c.get_doubles("x.vals"), (std::vector<double>{1.0, 2.5, 3.0}));
  EXPECT_EQ(c.at("x.vals").line, 5);
}

TEST(Config, DuplicateKeyNamesBothLines) {
  const std::string msg = message_of([] { parse_config_text("[srm]\nk = 5\n\nk = 6\n"); });
  EXPECT_NE(msg.find("2"), std::string::npos) << msg;
  EXPECT_NE(msg.find("4"), std::string::npos) << msg;
  EXPECT_EQ(code_of([] { parse_config_text("[srm]\nk = 5\n\nk = 6\n"); }), ErrorCode::ConfigError);
}

TEST(Config, UnknownKeyNamesLine) {
  const std::string msg = message_of([] { parse_config_text("[srm]\nk = 5\nbogus = 1\n"); });
  EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
}

TEST(Report, JsonRoundtripAndSchema) {
  EvalReport r;
  r.model = ModelTag::Htfa;
  r.seed = 42;
  r.metrics = {{"a", 0.1}, {"b", -3.0}};
  r.fit.model = ModelTag::Htfa;
  r.fit.record(5.0);
  r.fit.record(4.0);
  r.fit.seed = 42;
  const EvalReport back = eval_report_from_json(eval_report_to_json(r));
  EXPECT_EQ(back.model, ModelTag::Htfa);
  EXPECT_EQ(back.seed, 42u);
  EXPECT_EQ(back.metrics, r.metrics);
  EXPECT_EQ(back.fit.objective_trace, r.fit.objective_trace);
  EXPECT_EQ(back.fit.iterations, 1);
  EXPECT_EQ(code_of([] { eval_report_from_json("{\"v\": 2}"); }), ErrorCode::BadSpec);
  for (const char* fmt : {"text", "json", "csv"}) EXPECT_FALSE(render_report(r, fmt).empty());
}

TEST(ExitCodes, Contract) {
  EXPECT_EQ(exit_code_for(ErrorCode::Usage), 1);
  EXPECT_EQ(exit_code_for(ErrorCode::TruncatedFile), 2);
  EXPECT_EQ(exit_code_for(ErrorCode::ConfigError), 2);
  EXPECT_EQ(exit_code_for(ErrorCode::IoError), 2);
  EXPECT_EQ(exit_code_for(ErrorCode::SolverFailure), 3);
}

TEST(Cli, UnknownFlagIsUsageError) {
  std::string err;
  EXPECT_EQ(run({"simulate", "--bogus"}, nullptr, &err), 1);
  EXPECT_NE(err.find("Usage"), std::string::npos) << err;
}

TEST(Cli, MissingDataFileNamesPath) {
  TempDir dir;
  std::string err;
  const std::string data = dir / "nowhere";
  EXPECT_EQ(run({"fit", "--model", "srm", "--data", data, "--out", dir / "fit"}, nullptr, &err), 2);
  EXPECT_NE(err.find(data), std::string::npos) << err;
}

TEST(Cli, SrmPipelineEndToEnd) {
  TempDir dir;
  write_text_file(dir / "s.cfg",
                  "[simulate]\nsubjects = 5\nvoxels = 200\ntimepoints = 150\nfactors = 5\nsnr = 1.0\nseed = 3\n");
  write_text_file(dir / "f.cfg", "[srm]\nk = 5\n");
  ASSERT_EQ(run({"simulate", "--model", "srm", "--spec", dir / "s.cfg", "--out", dir / "d"}), 0);
  EXPECT_TRUE(fs::exists(dir / "d/X_0.f64"));
  ASSERT_EQ(run({"fit", "--model", "srm", "--data", dir / "d", "--config", dir / "f.cfg", "--out", dir / "f"}), 0);
  ASSERT_EQ(run({"evaluate", "--truth", dir / "d", "--fit", dir / "f", "--out", dir / "r.json"}), 0);
  const EvalReport r = eval_report_from_json(read_text_file(dir / "r.json"));
  EXPECT_EQ(r.seed, 3u);
  EXPECT_GE(r.metrics.at("aligned_recovery_score"), 0.9);
  std::string text;
  ASSERT_EQ(run({"report", "--in", dir / "r.json", "--format", "csv"}, &text), 0);
  EXPECT_NE(text.find("aligned_recovery_score"), std::string::npos);

  // Same pipeline again: identical metrics.
  ASSERT_EQ(run({"fit", "--model", "srm", "--data", dir / "d", "--config", dir / "f.cfg", "--out", dir / "f2"}), 0);
  ASSERT_EQ(run({"evaluate", "--truth", dir / "d", "--fit", dir / "f2", "--out", dir / "r2.json"}), 0);
  EXPECT_EQ(eval_report_from_json(read_text_file(dir / "r2.json")).metrics, r.metrics);
}
