#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <json.hpp>

#include "cli.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
    int code = -1;
    std::string out;
    std::string err;
};

Result scm_run(std::vector<std::string> args)
{
    std::ostringstream out, err;
    Result r;
    r.code = scm::cli::run(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t lines(const std::string& text) { return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')); }

class Cli : public ::testing::Test {
protected:
    fs::path dir;

    void SetUp() override
    {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir = fs::temp_directory_path() / (std::string("scm_cli_") + info->name());
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    void TearDown() override { fs::remove_all(dir); }

    std::string file(const std::string& name, const std::string& text)
    {
        const auto p = dir / name;
        std::ofstream(p, std::ios::binary) << text;
        return p.string();
    }
    std::string path(const std::string& name) const { return (dir / name).string(); }
};

const std::string kTwo = R"(schema_version: 1
topology: open
params: {kappa: 3.1, omega: 10}
vehicles:
  - {v_max: 4, x0: 0}
  - {v_max: 6, x0: -100}
integrator: {dt: 0.01, horizon: 300, sample_every: 100}
outputs: [trace, events]
)";

const std::string kBlocking = R"(schema_version: 1
topology: open
params: {kappa: 1, omega: 10}
vehicles:
  - {v_max: 4, x0: 0}
  - {v_max: 6, x0: -15}
  - {v_max: 5, x0: -30}
  - {v_max: 8, x0: -45}
  - {v_max: 4, x0: -60}
integrator: {dt: 0.01, horizon: 200, sample_every: 10}
)";

const std::string kRing = R"(schema_version: 1
topology: {ring: 200}
params: {kappa: 10, omega: 10}
generator: {density: 0.2, v_max: 6}
integrator: {dt: 0.05, horizon: 5, sample_every: 20}
)";

} // namespace

// ---------------------------------------------------------------------------
// argument handling

TEST_F(Cli, HelpIsSuccess) { EXPECT_EQ(scm_run({"--help"}).code, 0); }

TEST_F(Cli, MissingSubcommandIsBadInput) { EXPECT_EQ(scm_run({}).code, 1); }

TEST_F(Cli, UnknownFlagIsBadInput)
{
    const auto r = scm_run({"simulate", "--config", file("a.yaml", kTwo), "--bogus"});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("--bogus"), std::string::npos) << r.err;
}

TEST_F(Cli, MissingConfigFileNamesThePath)
{
    const auto r = scm_run({"simulate", "--config", path("nope.yaml")});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("nope.yaml"), std::string::npos) << r.err;
}

TEST_F(Cli, InvalidConfigNamesTheField)
{
    std::string text = kTwo;
    text.replace(text.find("kappa: 3.1"), 10, "kappa: 0");
    const auto r = scm_run({"simulate", "--config", file("bad.yaml", text)});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("params.kappa"), std::string::npos) << r.err;
}

TEST_F(Cli, PermissiveDowngradesUnknownKeys)
{
    const auto cfg = file("extra.yaml", kTwo + "notes: hello\n");
    EXPECT_EQ(scm_run({"simulate", "--config", cfg, "--out", path("t.csv")}).code, 1);
    const auto r = scm_run({"simulate", "--config", cfg, "--out", path("t.csv"), "--permissive"});
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.err.find("notes"), std::string::npos);
}

// ---------------------------------------------------------------------------
// subcommands

TEST_F(Cli, SimulateWritesTraceAndEvents)
{
    const auto r = scm_run({"simulate", "--config", file("two.yaml", kTwo), "--out", path("run.csv")});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto trace = slurp(path("run.csv"));
    EXPECT_EQ(trace.substr(0, trace.find('\n')), "t,vehicle_id,x,v");
    EXPECT_EQ(lines(trace), 1 + 2 * 301u);
    const auto events = slurp(path("run.events.csv"));
    EXPECT_EQ(lines(events), 2u) << events;
    EXPECT_EQ(events.rfind("t,passer,passed\n", 0), 0u);
}

TEST_F(Cli, SimulateToStdout)
{
    std::string text = kTwo;
    text.erase(text.find("outputs:"));
    const auto r = scm_run({"simulate", "--config", file("two.yaml", text), "--horizon", "1", "--sample-every", "50"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(lines(r.out), 1 + 2 * 3u) << r.out;
}

TEST_F(Cli, SimulateWithFigures)
{
    const auto r = scm_run({"simulate", "--config", file("ring.yaml", kRing), "--out", path("ring.csv"), "--svg",
                            "--every-kth", "10"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto ts = slurp(path("ring.timespace.svg"));
    EXPECT_EQ(ts.find("<circle"), std::string::npos);
    std::size_t paths = 0;
    for (auto p = ts.find("class=\"trajectory\""); p != std::string::npos; p = ts.find("class=\"trajectory\"", p + 1))
        ++paths;
    EXPECT_EQ(paths, 4u);
    EXPECT_TRUE(fs::exists(path("ring.minmax.svg")));
}

TEST_F(Cli, NumericalFailureExitsTwo)
{
    const auto cfg = file("blowup.yaml", R"(schema_version: 1
topology: open
params: {kappa: 0.01, omega: 1}
vehicles:
  - {v_max: 1, x0: 0}
  - {v_max: 1e300, x0: -0.001}
  - {v_max: 1e300, x0: -0.002}
integrator: {dt: 0.1, horizon: 10}
)");
    const auto r = scm_run({"simulate", "--config", cfg, "--out", path("x.csv"), "--permissive"});
    EXPECT_EQ(r.code, 2) << r.err;
    EXPECT_NE(r.err.find("step"), std::string::npos) << r.err;
}

TEST_F(Cli, OverCapacityStartIsBadInput)
{
    const auto cfg = file("tight.yaml", R"(schema_version: 1
topology: open
params: {kappa: 1, omega: 10}
vehicles:
  - {v_max: 4, x0: 0}
  - {v_max: 6, x0: -1}
  - {v_max: 6, x0: -2}
integrator: {horizon: 1}
)");
    EXPECT_EQ(scm_run({"simulate", "--config", cfg, "--out", path("x.csv")}).code, 1);
}

TEST_F(Cli, SolveMatchesSimulateEvent)
{
    const auto cfg = file("two.yaml", kTwo);
    ASSERT_EQ(scm_run({"solve", "--config", cfg, "--out", path("a.csv")}).code, 0);
    ASSERT_EQ(scm_run({"simulate", "--config", cfg, "--out", path("n.csv")}).code, 0);
    auto event_time = [](const std::string& text) {
        const auto row = text.substr(text.find('\n') + 1);
        return std::stod(row.substr(0, row.find(',')));
    };
    EXPECT_NEAR(event_time(slurp(path("a.events.csv"))), event_time(slurp(path("n.events.csv"))), 1e-6);
    EXPECT_EQ(lines(slurp(path("a.csv"))), lines(slurp(path("n.csv"))));
}

TEST_F(Cli, SolveRejectsRing)
{
    const auto r = scm_run({"solve", "--config", file("ring.yaml", kRing), "--out", path("a.csv")});
    EXPECT_EQ(r.code, 1);
    EXPECT_FALSE(r.err.empty());
}

TEST_F(Cli, DiagramExample)
{
    const auto r = scm_run({"diagram", "--kappa", "10", "--omega", "10", "--vmax", "6", "--L", "1000", "--rho",
                            "0.01:1.2:0.01", "--out", path("fd.csv"), "--svg"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto csv = slurp(path("fd.csv"));
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "rho,v_eq,q");
    EXPECT_EQ(lines(csv), 121u);
    EXPECT_TRUE(fs::exists(path("fd.svg")));
}

TEST_F(Cli, DiagramBadGrid)
{
    EXPECT_EQ(scm_run({"diagram", "--rho", "0.5:0.1:0.01"}).code, 1);
    EXPECT_EQ(scm_run({"diagram", "--rho", "a:b:c"}).code, 1);
    EXPECT_EQ(scm_run({"diagram", "--kappa", "-1"}).code, 1);
}

TEST_F(Cli, StabilityReportsRates)
{
    const auto cfg = file("platoon.yaml", R"(schema_version: 1
topology: open
params: {kappa: 1, omega: 10}
vehicles:
  - {v_max: 4, x0: 0}
  - {v_max: 6, x0: -20}
  - {v_max: 6, x0: -40}
)");
    const auto r = scm_run({"stability", "--config", cfg});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.out.substr(0, r.out.find('\n')), "vehicle,lambda,fitted,relative_error");
    EXPECT_EQ(lines(r.out), 3u);
    EXPECT_NE(r.out.find(",-0.2,"), std::string::npos) << r.out;
}

TEST_F(Cli, StabilityRejectsSlowFollower)
{
    const auto cfg = file("split.yaml", R"(schema_version: 1
topology: open
params: {kappa: 1, omega: 10}
vehicles:
  - {v_max: 4, x0: 0}
  - {v_max: 3, x0: -20}
)");
    EXPECT_EQ(scm_run({"stability", "--config", cfg}).code, 1);
}

TEST_F(Cli, VerifyBlockingPasses)
{
    const auto r = scm_run({"verify", "--config", file("blocking.yaml", kBlocking), "--horizon", "200"});
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("passing events: 0"), std::string::npos) << r.out;
    EXPECT_EQ(r.out.find("FAIL"), std::string::npos) << r.out;
}

TEST_F(Cli, VerifyReportsViolationWithinHorizon)
{
    // far above the threshold but too short a horizon to sort: checks e and f fail
    std::string text = kTwo;
    text.replace(text.find("kappa: 3.1"), 10, "kappa: 10");
    const auto r = scm_run({"verify", "--config", file("short.yaml", text), "--horizon", "5"});
    EXPECT_EQ(r.code, 3) << r.out;
    EXPECT_NE(r.err.find("check f failed"), std::string::npos) << r.err;
}

TEST_F(Cli, JamwaveSmallRun)
{
    const auto r = scm_run({"jamwave", "--horizon", "2", "--sample-every", "50", "--out", path("jam.csv"), "--svg"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(lines(slurp(path("jam.csv"))), 1 + 500 * 5u);
    const auto ts = slurp(path("jam.timespace.svg"));
    std::size_t paths = 0;
    for (auto p = ts.find("class=\"trajectory\""); p != std::string::npos; p = ts.find("class=\"trajectory\"", p + 1))
        ++paths;
    EXPECT_EQ(paths, 10u);
    EXPECT_NE(r.err.find("spread"), std::string::npos) << r.err;
}

TEST_F(Cli, JamwaveRejectsInfeasibleArc)
{
    // 0.3 * 1000 m at 3 veh/m holds more than the 500 vehicles on the ring
    EXPECT_EQ(scm_run({"jamwave", "--horizon", "1", "--rho-jam", "3"}).code, 1);
    EXPECT_EQ(scm_run({"jamwave", "--horizon", "1", "--jam-fraction", "1.5"}).code, 1);
}

// ---------------------------------------------------------------------------
// sweep

TEST_F(Cli, SweepThreeByThree)
{
    const auto r = scm_run({"sweep", "--config", file("ring.yaml", kRing), "--grid", "kappa=5,10,20", "--grid",
                            "rho=0.1,0.2,0.3", "--parallel", "3", "--out", path("grid")});
    ASSERT_EQ(r.code, 0) << r.err;
    std::size_t traces = 0;
    for (const auto& e : fs::recursive_directory_iterator(path("grid")))
        traces += e.path().filename() == "trace.csv";
    EXPECT_EQ(traces, 9u);
    const auto manifest = nlohmann::json::parse(slurp(path("grid") + "/manifest.json"));
    ASSERT_EQ(manifest["runs"].size(), 9u);
    for (const auto& run : manifest["runs"]) {
        EXPECT_EQ(run["status"], "ok");
        EXPECT_EQ(run["outputs"]["trace.csv"].get<std::string>().size(), 64u);
        EXPECT_EQ(run["params"].size(), 2u);
    }
    EXPECT_EQ(manifest["runs"][4]["vehicles"], 40);
}

TEST_F(Cli, SweepIsolatesFailedCell)
{
    const auto r = scm_run({"sweep", "--config", file("ring.yaml", kRing), "--grid", "kappa=0,5,10", "--out",
                            path("grid")});
    EXPECT_EQ(r.code, 1);
    const auto manifest = nlohmann::json::parse(slurp(path("grid") + "/manifest.json"));
    ASSERT_EQ(manifest["runs"].size(), 3u);
    EXPECT_EQ(manifest["runs"][0]["status"], "failed");
    EXPECT_NE(manifest["runs"][0]["error"].get<std::string>().find("kappa"), std::string::npos);
    EXPECT_EQ(manifest["runs"][1]["status"], "ok");
    EXPECT_EQ(manifest["runs"][2]["status"], "ok");
    EXPECT_NE(r.err.find("kappa=0"), std::string::npos) << r.err;
}

TEST_F(Cli, SweepFlipsAtPassingThreshold)
{
    const auto r = scm_run({"sweep", "--config", file("two.yaml", kTwo), "--grid", "kappa=0.5,1,2,2.9,3,3.1,4",
                            "--horizon", "2000", "--out", path("grid")});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto manifest = nlohmann::json::parse(slurp(path("grid") + "/manifest.json"));
    for (const auto& run : manifest["runs"]) {
        const double kappa = run["params"]["kappa"];
        EXPECT_EQ(run["passing_events"].get<int>(), kappa > 3.0 ? 1 : 0) << "kappa=" << kappa;
    }
}

TEST_F(Cli, SweepManifestsDifferOnlyInTimestamp)
{
    const auto cfg = file("ring.yaml", kRing);
    ASSERT_EQ(scm_run({"sweep", "--config", cfg, "--grid", "kappa=5,10", "--grid", "omega=5,10", "--parallel", "1",
                       "--out", path("a")})
                  .code,
              0);
    ASSERT_EQ(scm_run({"sweep", "--config", cfg, "--grid", "kappa=5,10", "--grid", "omega=5,10", "--parallel", "4",
                       "--out", path("b")})
                  .code,
              0);
    auto a = nlohmann::json::parse(slurp(path("a") + "/manifest.json"));
    auto b = nlohmann::json::parse(slurp(path("b") + "/manifest.json"));
    EXPECT_TRUE(a.contains("generated_at"));
    a.erase("generated_at");
    b.erase("generated_at");
    EXPECT_EQ(a, b);
    for (const auto& run : a["runs"]) {
        const std::string cell = run["cell"];
        EXPECT_EQ(slurp(path("a") + "/" + cell + "/trace.csv"), slurp(path("b") + "/" + cell + "/trace.csv"));
    }
}

TEST_F(Cli, SweepArgumentErrors)
{
    const auto cfg = file("ring.yaml", kRing);
    EXPECT_EQ(scm_run({"sweep", "--config", cfg, "--grid", "kappa=1"}).code, 1);
    EXPECT_EQ(scm_run({"sweep", "--config", cfg, "--out", path("g")}).code, 1);
    EXPECT_EQ(scm_run({"sweep", "--config", cfg, "--grid", "colour=1", "--out", path("g")}).code, 1);
    EXPECT_EQ(scm_run({"sweep", "--config", cfg, "--grid", "kappa=1", "--parallel", "0", "--out", path("g")}).code, 1);
}
