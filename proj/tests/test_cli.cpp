#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "tangles/cli.hpp"

using namespace tangles;
namespace fs = std::filesystem;

namespace {

struct Run {
    int rc;
    std::string out, err;
};

Run run(std::vector<std::string> args) {
    args.insert(args.begin(), "tangles");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int rc = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {rc, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
  protected:
    void SetUp() override {
        dir = fs::temp_directory_path() / ("tangles_cli_" + std::to_string(::getpid()));
        fs::remove_all(dir);
        fs::create_directories(dir);
        std::ifstream in(q / "corpus.jsonl");
        std::ofstream out(dir / "corpus.jsonl");
        for (std::string line; std::getline(in, line);) {
            if (line.find("refusal") == std::string::npos) out << line << "\n";
        }
    }
    void TearDown() override { fs::remove_all(dir); }

    std::string p(const std::string& name) const { return (dir / name).string(); }

    fs::path dir;
    const fs::path q = fs::path(TANGLES_FIXTURE_DIR) / "qualitative";
};

}  // namespace

TEST_F(CliTest, UsageErrorsExitOne) {
    EXPECT_EQ(run({}).rc, 1);
    auto r = run({"detect", "--out", p("d.jsonl")});
    EXPECT_EQ(r.rc, 1);
    EXPECT_NE(r.err.find("--in"), std::string::npos);
    EXPECT_EQ(run({"agree", "--count", "cultural:1:2"}).rc, 1);
    EXPECT_EQ(run({"corpus", "validate", "--in", p("missing.jsonl")}).rc, 1);
}

TEST_F(CliTest, ProviderFailureExitsTwo) {
    io::write_file(dir / "empty.json", "{}");
    auto r = run({"judge", "--in", p("corpus.jsonl"), "--out", p("v.jsonl"), "--replay", p("empty.json")});
    EXPECT_EQ(r.rc, 2) << r.err;
}

TEST_F(CliTest, DetectJudgeSampleAnnotateExport) {
    auto r = run({"detect", "--in", p("corpus.jsonl"), "--out", p("det.jsonl"), "--embed", "replay", "--embed-fixture",
                  (q / "embeddings.json").string(), "--ner", "replay", "--ner-fixture", (q / "entities.json").string()});
    ASSERT_EQ(r.rc, 0) << r.err;
    const auto header = io::read_jsonl_header(dir / "det.jsonl");
    EXPECT_EQ(header["command"], "detect");
    EXPECT_EQ(header["config"]["lexicon_checksum"], checksum(LexiconSet::seeded(), NerBiasMap::seeded()));
    EXPECT_EQ(header["config"]["ner_provider"], "replay-ner");

    r = run({"judge", "--in", p("corpus.jsonl"), "--out", p("ver.jsonl"), "--replay", (q / "judge.json").string()});
    ASSERT_EQ(r.rc, 0) << r.err;
    EXPECT_EQ(load_verdicts(dir / "ver.jsonl").size(), 4u);

    r = run({"sweep", "--in", p("det.jsonl"), "--out", p("sweep.csv")});
    ASSERT_EQ(r.rc, 0) << r.err;
    EXPECT_EQ(io::read_file(dir / "sweep.csv").rfind("#", 0), 0u);

    r = run({"sample", "--in", p("corpus.jsonl"), "--detections", p("det.jsonl"), "--verdicts", p("ver.jsonl"),
             "--agreement", "2", "--disagreement", "1", "--undetected", "1", "--seed", "7", "--out", p("sample.jsonl")});
    ASSERT_EQ(r.rc, 0) << r.err;
    std::map<std::string, std::string> strata;
    io::for_each_jsonl(io::read_file(dir / "sample.jsonl"), "sample", [&](size_t, const nlohmann::json& j) {
        strata[j["id"]] = j["stratum"];
    });
    EXPECT_EQ(strata, (std::map<std::string, std::string>{{"fn-christ-jesus", "disagreement"},
                                                           {"fp-win-successful", "agreement"},
                                                           {"tn-pasture-fence", "undetected"},
                                                           {"tp-church-temple", "agreement"}}));

    r = run({"annotate", "create", "--sample", p("sample.jsonl"), "--store", p("store.jsonl"), "--detections",
             p("det.jsonl"), "--verdicts", p("ver.jsonl"), "--seed", "1"});
    ASSERT_EQ(r.rc, 0) << r.err;
    r = run({"annotate", "progress", "--store", p("store.jsonl")});
    EXPECT_NE(r.out.find("total 4, gold 0"), std::string::npos) << r.out;
    r = run({"annotate", "export", "--store", p("store.jsonl"), "--out", p("gold.jsonl")});
    EXPECT_EQ(r.rc, 1);
    EXPECT_NE(r.err.find("task-0000"), std::string::npos) << r.err;

    {
        StoreOptions o;
        o.adjudicators = {"adj"};
        AnnotationStore store(dir / "store.jsonl", o);
        for (const auto& t : store.tasks()) {
            LabelDecision d;
            if (t.record.id == "tp-church-temple") d = {true, {BiasCategory::religious}, false, ""};
            store.submit_label(t.task_id, "a1", d);
            store.submit_label(t.task_id, "a2", d);
        }
    }
    r = run({"annotate", "export", "--store", p("store.jsonl"), "--out", p("gold.jsonl")});
    ASSERT_EQ(r.rc, 0) << r.err;
    r = run({"confusion", "--gold", p("gold.jsonl"), "--detections", p("det.jsonl"), "--verdicts", p("ver.jsonl")});
    ASSERT_EQ(r.rc, 0) << r.err;
    EXPECT_NE(r.out.find("| heuristic | 1 | 2 | 0 | 1 |"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("| judge | 1 | 1 | 0 | 2 |"), std::string::npos) << r.out;
}
