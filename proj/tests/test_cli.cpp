#include "mapl/checkpoint.hpp"
#include "mapl/cli.hpp"
#include "mapl/error.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <regex>
#include <sstream>

using namespace mapl;
namespace fs = std::filesystem;

namespace {

struct Invocation {
    int code = -1;
    std::string out, err;
};

Invocation invoke(std::vector<std::string> args) {
    args.insert(args.begin(), "mapl");
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    std::ostringstream out, err;
    Invocation r;
    r.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

int count_lines(const std::string& s) { return static_cast<int>(std::count(s.begin(), s.end(), '\n')); }

// One synthetic dataset and config shared by every test in this file.
class CliTest : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = new mapl::testing::TempDir("cli");
        const auto r = invoke({"make-synthetic", "--out", (*dir_ / "data").string(), "--category", "stripes", "--size",
                               "32", "--train", "10", "--test-normal", "3", "--test-anomalous", "3"});
        ASSERT_EQ(r.code, 0) << r.err;
        std::ofstream f(*dir_ / "run.ini");
        f << "[dataset]\nroot = " << (*dir_ / "data").string() << "\ncategory = stripes\n"
          << "texture_dir = " << (*dir_ / "data" / "textures").string() << "\nimage_size = 32\n"
          << "[train]\nsteps = 4\nwarmup_steps = 1\nbatch_size = 4\nmemory_N = 3\nlabeler_refresh_every = 2\n"
          << "labeler_pool = 12\nnormal_pool = 8\nprojection_dims = 4\ngmm_components = 1\nbase_width = 2\n"
          << "predictor_hidden = 4\n";
    }
    static void TearDownTestSuite() {
        delete dir_;
        dir_ = nullptr;
    }
    static fs::path path(const std::string& rel) { return *dir_ / rel; }
    static std::string config() { return path("run.ini").string(); }

    static mapl::testing::TempDir* dir_;
};

mapl::testing::TempDir* CliTest::dir_ = nullptr;

std::vector<std::string> sorted_listing(const fs::path& root) {
    std::vector<std::string> v;
    for (const auto& e : fs::recursive_directory_iterator(root)) v.push_back(fs::relative(e.path(), root).string());
    std::sort(v.begin(), v.end());
    return v;
}

}  // namespace

TEST_F(CliTest, SimulateZeroGivesEmptyManifest) {
    const auto r = invoke({"simulate", "--config", config(), "--count", "0", "--out", path("sim0").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(count_lines(slurp(path("sim0/manifest.csv"))), 1);
    EXPECT_EQ(sorted_listing(path("sim0")), std::vector<std::string>{"manifest.csv"});
}

TEST_F(CliTest, SimulateCountAndDeterminism) {
    for (const char* d : {"simA", "simB"}) {
        const auto r = invoke({"simulate", "--config", config(), "--count", "8", "--seed", "11", "--out", path(d).string()});
        ASSERT_EQ(r.code, 0) << r.err;
    }
    const auto files = sorted_listing(path("simA"));
    EXPECT_EQ(files.size(), 17u);
    EXPECT_EQ(files.front(), "0000_img.png");
    EXPECT_EQ(count_lines(slurp(path("simA/manifest.csv"))), 9);
    EXPECT_EQ(slurp(path("simA/manifest.csv")).substr(0, 36), "index,source,delta,noise_kind,degene");
    EXPECT_EQ(sorted_listing(path("simB")), files);
    for (const auto& f : files) EXPECT_EQ(slurp(path("simA") / f), slurp(path("simB") / f)) << f;

    const auto other = invoke({"simulate", "--config", config(), "--count", "8", "--seed", "12", "--out", path("simC").string()});
    ASSERT_EQ(other.code, 0);
    EXPECT_NE(slurp(path("simA/0000_img.png")) + slurp(path("simA/0001_img.png")),
              slurp(path("simC/0000_img.png")) + slurp(path("simC/0001_img.png")));
}

TEST_F(CliTest, TrainSingleStepThenEval) {
    const auto t = invoke({"train", "--config", config(), "--set", "train.steps=1", "--set", "train.warmup_steps=0",
                           "--out", path("run1").string()});
    ASSERT_EQ(t.code, 0) << t.err;
    ASSERT_TRUE(fs::exists(path("run1/model.ckpt")));
    EXPECT_EQ(count_lines(slurp(path("run1/train_log.csv"))), 2);  // header + one step
    EXPECT_EQ(ckpt::unpack(ckpt::read_file(path("run1/model.ckpt"))).step, 1);

    const auto e = invoke({"eval", "--checkpoint", path("run1/model.ckpt").string(), "--out", path("eval1").string(),
                           "--heatmaps"});
    ASSERT_EQ(e.code, 0) << e.err;
    EXPECT_TRUE(std::regex_search(e.out, std::regex("stripes image AUROC [01]\\.\\d{4}\\b"))) << e.out;
    int pngs = 0;
    for (const auto& f : fs::directory_iterator(path("eval1/heatmaps"))) pngs += f.path().extension() == ".png";
    EXPECT_EQ(pngs, 6);
    EXPECT_EQ(count_lines(slurp(path("eval1/per_image.csv"))), 7);
    EXPECT_TRUE(fs::exists(path("eval1/results.csv")));
    EXPECT_NE(slurp(path("eval1/table.txt")).find("Average"), std::string::npos);
}

TEST_F(CliTest, TrainIsDeterministic) {
    for (const char* d : {"detA", "detB"})
        ASSERT_EQ(invoke({"train", "--config", config(), "--seed", "4", "--out", path(d).string()}).code, 0);
    EXPECT_EQ(slurp(path("detA/train_log.csv")), slurp(path("detB/train_log.csv")));
    EXPECT_EQ(slurp(path("detA/model.ckpt")), slurp(path("detB/model.ckpt")));
    const auto r = ckpt::unpack(ckpt::read_file(path("detA/model.ckpt")));
    EXPECT_EQ(r.config.train.seed, 4u);
}

TEST_F(CliTest, PerturbTrainChangesSourcesDeterministically) {
    for (const char* d : {"pertA", "pertB"})
        ASSERT_EQ(invoke({"train", "--config", config(), "--set", "dataset.perturb_train=true", "--out", path(d).string()}).code, 0);
    ASSERT_EQ(invoke({"train", "--config", config(), "--out", path("plain").string()}).code, 0);
    EXPECT_EQ(slurp(path("pertA/train_log.csv")), slurp(path("pertB/train_log.csv")));
    EXPECT_NE(slurp(path("pertA/train_log.csv")), slurp(path("plain/train_log.csv")));
}

TEST_F(CliTest, RefreshEveryOverridesLabelerCadence) {
    ASSERT_EQ(invoke({"train", "--config", config(), "--refresh-every", "1", "--out", path("ref1").string()}).code, 0);
    const auto r = ckpt::unpack(ckpt::read_file(path("ref1/model.ckpt")));
    EXPECT_EQ(r.config.train.labeler_refresh_every, 1);
    ASSERT_TRUE(r.labeler.has_value());
    EXPECT_EQ(r.labeler->refreshed_at, 3);
}

TEST_F(CliTest, InvalidConfigurationExitsTwo) {
    const auto unknown = invoke({"train", "--config", config(), "--set", "train.bogus=1", "--out", path("bad").string()});
    EXPECT_EQ(unknown.code, 2);
    EXPECT_NE(unknown.err.find("train.bogus"), std::string::npos) << unknown.err;
    EXPECT_FALSE(fs::exists(path("bad/model.ckpt")));

    std::ofstream(path("bad.ini")) << "[train]\nnonsense = 3\n";
    const auto file = invoke({"train", "--config", path("bad.ini").string(), "--out", path("bad").string()});
    EXPECT_EQ(file.code, 2);
    EXPECT_NE(file.err.find("bad.ini:2"), std::string::npos) << file.err;

    EXPECT_EQ(invoke({"train", "--no-such-flag"}).code, 2);
    EXPECT_EQ(invoke({}).code, 2);
}

TEST_F(CliTest, MissingDatasetExitsThree) {
    const auto r = invoke({"train", "--config", config(), "--set", "dataset.root=" + path("nowhere").string(), "--out",
                           path("nodata").string()});
    EXPECT_EQ(r.code, 3) << r.err;
}

TEST_F(CliTest, CorruptedCheckpointFailsEval) {
    ASSERT_EQ(invoke({"train", "--config", config(), "--out", path("corrupt").string()}).code, 0);
    std::string bytes = slurp(path("corrupt/model.ckpt"));
    bytes[bytes.size() - 3] ^= 0x55;
    std::ofstream(path("corrupt/model.ckpt"), std::ios::binary) << bytes;
    const auto e = invoke({"eval", "--checkpoint", path("corrupt/model.ckpt").string(), "--out", path("ceval").string()});
    EXPECT_NE(e.code, 0);
    EXPECT_FALSE(e.err.empty());
    EXPECT_NE(invoke({"eval", "--checkpoint", path("absent.ckpt").string()}).code, 0);
}

TEST_F(CliTest, AblateWritesTable) {
    const auto r = invoke({"ablate", "--config", config(), "--set", "train.steps=2", "--ablate", "no_msff,with_ca",
                           "--out", path("abl").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const std::string csv = slurp(path("abl/ablation.csv"));
    EXPECT_EQ(count_lines(csv), 4);  // header, baseline, two ablations
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "configuration,use_msff,use_attention,use_ca,stripes,average");
    EXPECT_NE(csv.find("\nno_msff,0,1,0,"), std::string::npos) << csv;
    EXPECT_NE(csv.find("\nwith_ca,1,1,1,"), std::string::npos) << csv;
    EXPECT_NE(csv.find("\nbaseline,1,1,0,"), std::string::npos) << csv;
    EXPECT_TRUE(fs::exists(path("abl/ablation.txt")));
    EXPECT_EQ(invoke({"ablate", "--config", config(), "--ablate", "nonsense", "--out", path("abl2").string()}).code, 2);
}

TEST(CliAblation, FlagOverrides) {
    const config::RunConfig base = config::parse("");
    EXPECT_FALSE(cli::ablated(base, cli::Ablation::no_msff).train.net.use_msff);
    EXPECT_FALSE(cli::ablated(base, cli::Ablation::no_attention).train.net.use_attention);
    EXPECT_TRUE(cli::ablated(base, cli::Ablation::with_ca).train.net.use_ca);
    EXPECT_EQ(config::to_text(cli::ablated(base, cli::Ablation::baseline)), config::to_text(base));
    for (auto a : {cli::Ablation::baseline, cli::Ablation::no_msff, cli::Ablation::no_attention, cli::Ablation::with_ca})
        EXPECT_EQ(cli::parse_ablation(cli::to_string(a)), a);
    EXPECT_THROW(cli::parse_ablation("bogus"), ConfigError);
}

TEST(CliConfig, ResolutionOrder) {
    mapl::testing::TempDir dir("resolve");
    std::ofstream(dir / "a.ini") << "[train]\nsteps = 9\nwarmup_steps = 2\nseed = 1\n";
    cli::ConfigOptions o;
    o.config_path = (dir / "a.ini").string();
    EXPECT_EQ(cli::resolve_config(o).train.steps, 9);
    o.overrides = {"train.steps=12", "train.seed=2"};
    o.seed = 77;
    o.refresh_every = 5;
    const auto c = cli::resolve_config(o);
    EXPECT_EQ(c.train.steps, 12);
    EXPECT_EQ(c.train.seed, 77u);
    EXPECT_EQ(c.train.labeler_refresh_every, 5);
    o.overrides = {"train.steps"};
    EXPECT_THROW(cli::resolve_config(o), ConfigError);
}
