#include <filesystem>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "nelson/commands.hpp"
#include "nelson/config.hpp"
#include "nelson/io.hpp"

using namespace nelson;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("nelson_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Config, EmitParseRoundTrip) {
  RunConfig c;
  c.model.eps = 0.07;
  c.model.g = 0.123456789012345;
  c.seed = 18446744073709551615ULL;
  c.g_list = {0.4, 1e-3, 0.1};
  c.output_dir = "some dir/with space";
  std::istringstream in(emit_config(c));
  EXPECT_EQ(parse_config(in), c);
}

TEST(Config, DefaultsEmitEveryKeyOnce) {
  const std::string text = emit_config(RunConfig{});
  std::istringstream in(text);
  std::string line;
  std::set<std::string> keys;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::string key = line.substr(0, line.find(" = "));
    EXPECT_TRUE(keys.insert(key).second) << key;
  }
  EXPECT_EQ(keys.size(), 35u);
  EXPECT_TRUE(keys.count("mc.seed"));
}

TEST(Config, SeedIsRequired) {
  std::istringstream in("model.g = 0.2\n");
  EXPECT_THROW(parse_config(in), std::invalid_argument);
}

TEST(Config, CommentsAndWhitespace) {
  std::istringstream in("# header\n  mc.seed = 7   # trailing\n\n sweep.g = 0.3 ,0.2\n");
  const RunConfig c = parse_config(in);
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.g_list, (std::vector<double>{0.3, 0.2}));
}

TEST(Config, RejectsBadInput) {
  std::istringstream unknown("mc.seed = 1\nmodel.mass = 2\n");
  EXPECT_THROW(parse_config(unknown), std::invalid_argument);
  std::istringstream malformed("mc.seed = 1\nmodel.eps = 0.1x\n");
  EXPECT_THROW(parse_config(malformed), std::invalid_argument);
  std::istringstream no_eq("mc.seed 1\n");
  EXPECT_THROW(parse_config(no_eq), std::invalid_argument);
  std::istringstream invalid("mc.seed = 1\nmodel.eps = -1\n");
  EXPECT_THROW(parse_config(invalid), std::invalid_argument);
  std::istringstream tau("mc.seed = 1\nmodel.tau = 5\n");
  EXPECT_THROW(parse_config(tau), std::invalid_argument);
  std::istringstream short_momentum("mc.seed = 1\nadvanced.momentum = 1, 2\n");
  EXPECT_THROW(parse_config(short_momentum), std::invalid_argument);
  std::istringstream negative_seed("mc.seed = -1\n");
  EXPECT_THROW(parse_config(negative_seed), std::invalid_argument);
  RunConfig c;
  EXPECT_THROW(set_config_value(c, "nope", "1"), std::invalid_argument);
  EXPECT_THROW(load_config("/nonexistent/nelson.cfg"), std::runtime_error);
}

TEST(Csv, LayoutAndQuoting) {
  CsvTable t("title", {{"a", "time"}, {"b", ""}, {"c", "1"}});
  t.note("extra");
  t.add_row().num(0.1).integer(-3).text("x,\"y\"");
  const std::string s = t.str();
  EXPECT_EQ(s, "# title\n# extra\n# units: a[time] b[1] c[1]\na,b,c\n0.1,-3,\"x,\"\"y\"\"\"\n");
  CsvTable bad("t", {{"a", ""}});
  bad.add_row().num(1).num(2);
  EXPECT_THROW(bad.str(), std::logic_error);
}

TEST(Csv, NumbersRoundTrip) {
  for (double x : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23}) {
    EXPECT_EQ(std::stod(format_number(x)), x);
  }
  EXPECT_EQ(format_number(NAN), "nan");
  EXPECT_EQ(format_number(-INFINITY), "-inf");
}

TEST(Io, Sha256KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(Io, AtomicWriteLeavesNoTemporary) {
  const fs::path dir = scratch_dir("atomic");
  ensure_writable_dir(dir);
  write_file_atomic(dir / "f.txt", "one");
  write_file_atomic(dir / "f.txt", "two");
  EXPECT_EQ(read_file(dir / "f.txt"), "two");
  EXPECT_FALSE(fs::exists(dir / "f.txt.tmp"));
  fs::remove_all(dir);
}

TEST(Io, UnwritableDirectoryIsRejected) {
  const fs::path dir = scratch_dir("blocked");
  fs::create_directories(dir.parent_path());
  write_file_atomic(dir, "a file, not a directory");
  EXPECT_THROW(ensure_writable_dir(dir / "sub"), std::runtime_error);
  fs::remove(dir);
}

TEST(Commands, EstimateAtZeroCouplingWritesExactZeroAndManifest) {
  const fs::path dir = scratch_dir("estimate");
  RunConfig c;
  c.model.g = 0.0;
  c.model.big_t = 1.0;
  c.model.tau = 0.5;
  c.dt = 0.1;
  c.n_paths = 100;
  c.output_dir = dir.string();
  std::ostringstream log;
  ASSERT_EQ(run_command("estimate", c, log), 0) << log.str();
  const std::string csv = read_file(dir / "estimate" / "estimate.csv");
  std::istringstream in(csv);
  std::string line, last;
  while (std::getline(in, line)) last = line;
  EXPECT_EQ(last, "1,0.1,0,100,0,0,100,0,0");

  const auto manifest = nlohmann::json::parse(read_file(dir / "estimate" / "manifest.json"));
  EXPECT_EQ(manifest["status"], "ok");
  EXPECT_EQ(manifest["command"], "estimate");
  EXPECT_EQ(manifest["outputs"]["estimate.csv"]["sha256"], sha256_hex(csv));
  EXPECT_EQ(manifest["outputs"]["estimate.csv"]["bytes"], csv.size());
  std::istringstream cfg(manifest["config"].get<std::string>());
  EXPECT_EQ(parse_config(cfg), c);
  fs::remove_all(dir);
}

TEST(Commands, ErrorsAreClassifiedInTheManifest) {
  const fs::path dir = scratch_dir("errors");
  RunConfig c;
  c.output_dir = dir.string();
  c.t_list = {4.0, 8.0};
  c.n_paths = 100;
  std::ostringstream log;
  // Two horizons cannot be extrapolated; sweep rows carry the error and the command fails.
  EXPECT_EQ(run_command("sweep-g", c, log), 1);
  c.fock_n_half = 1000;
  EXPECT_EQ(run_command("fock", c, log), 2);
  const auto manifest = nlohmann::json::parse(read_file(dir / "fock" / "manifest.json"));
  EXPECT_EQ(manifest["status"], "error");
  EXPECT_EQ(manifest["error"]["kind"], "configuration");
  c.quad.max_subdivisions = 1;
  c.model.eps = 0.01;
  EXPECT_EQ(run_command("kernels", c, log), 2);
  const auto q = nlohmann::json::parse(read_file(dir / "kernels" / "manifest.json"));
  EXPECT_EQ(q["error"]["kind"], "quadrature");
  fs::remove_all(dir);
}

TEST(Commands, UnwritableOutputFailsBeforeComputing) {
  const fs::path file = scratch_dir("not_a_dir");
  write_file_atomic(file, "x");
  RunConfig c;
  c.output_dir = file.string();
  std::ostringstream log;
  EXPECT_THROW(run_command("kernels", c, log), std::runtime_error);
  fs::remove(file);
}
