#include <doctest.h>

#include <fstream>
#include <sstream>

#include "cardioseg_cli/cli.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result cli(std::vector<std::string> args) {
    args.insert(args.begin(), "cardioseg");
    std::ostringstream out, err;
    const int code = cardioseg::cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> listing(const fs::path& dir) {
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(dir)) out.push_back(e.path().filename().string());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

TEST_CASE("help exits 0 and lists every flag") {
    const std::map<std::string, std::vector<std::string>> flags{
        {"phantom", {"--count", "--seed", "--out", "--papillary", "--noise"}},
        {"clean-masks", {"--in", "--out", "--connectivity"}},
        {"train", {"--config", "--data", "--out", "--log", "--checkpoint", "--resume"}},
        {"segment", {"--model", "--image", "--out", "--keep-papillary"}},
        {"eval", {"--pred", "--gt", "--report", "--aggregation", "--clean-gt"}},
        {"clinical", {"--seg-ed", "--seg-es", "--raw-ed", "--raw-es", "--report"}},
        {"bland-altman", {"--a", "--b", "--out", "--points"}},
        {"reconstruct", {"--seg", "--label", "--out"}},
        {"gradcheck", {"--seed", "--trials", "--tolerance"}},
    };
    for (const auto& [cmd, names] : flags) {
        const Result r = cli({cmd, "--help"});
        CHECK(r.code == 0);
        for (const auto& f : names) {
            INFO(cmd << " " << f);
            CHECK(r.out.find(f) != std::string::npos);
        }
    }
    CHECK(cli({"--help"}).code == 0);
}

TEST_CASE("usage errors exit 1") {
    CHECK(cli({}).code == 1);
    CHECK(cli({"frobnicate"}).code == 1);
    CHECK(cli({"phantom", "--count", "2"}).code == 1);
    CHECK(cli({"reconstruct", "--seg", "/no/such/file.nii", "--out", "x.stl"}).code == 1);
    const Result r = cli({"phantom", "--count", "x", "--seed", "1", "--out", "o"});
    CHECK(r.code == 1);
    CHECK(r.err.find("--count") != std::string::npos);
}

TEST_CASE("end-to-end pipeline through the command line") {
    oracle::TempDir dir("cli");
    const fs::path data = dir / "data";
    REQUIRE(cli({"phantom", "--count", "2", "--seed", "5", "--out", data.string(), "--papillary"}).code == 0);
    const auto files = listing(data);
    CHECK(files.size() == 2 * 7 + 1);

    // byte-identical regeneration
    const fs::path again = dir / "again";
    REQUIRE(cli({"phantom", "--count", "2", "--seed", "5", "--out", again.string(), "--papillary"}).code == 0);
    for (const auto& f : files) CHECK(slurp(data / f) == slurp(again / f));

    // cleaning raw masks reproduces the truth files
    const fs::path masks = dir / "masks", cleaned = dir / "cleaned";
    fs::create_directories(masks);
    for (const auto& f : files)
        if (f.find("_mask.nii.gz") != std::string::npos) fs::copy_file(data / f, masks / f);
    REQUIRE(cli({"clean-masks", "--in", masks.string(), "--out", cleaned.string()}).code == 0);
    const fs::path truth = dir / "truth";
    fs::create_directories(truth);
    for (const auto& f : files)
        if (f.find("_truth.nii.gz") != std::string::npos) {
            std::string name = f;
            name.replace(name.find("_truth"), 6, "_mask");
            fs::copy_file(data / f, truth / name);
        }
    const Result ev = cli({"eval", "--pred", cleaned.string(), "--gt", truth.string(), "--report", (dir / "m.csv").string()});
    REQUIRE(ev.code == 0);
    const std::string metrics = slurp(dir / "m.csv");
    CHECK(metrics.find("sub000,ED,myo,1,0,1,100") != std::string::npos);
    CHECK(metrics.find("sub001,ES,lv,1,0,1,100") != std::string::npos);

    const Result cl = cli({"clinical", "--seg-ed", (truth / "sub000_ED_mask.nii.gz").string(), "--seg-es",
                           (truth / "sub000_ES_mask.nii.gz").string(), "--raw-ed", (masks / "sub000_ED_mask.nii.gz").string(),
                           "--raw-es", (masks / "sub000_ES_mask.nii.gz").string(), "--subject", "sub000", "--report",
                           (dir / "c0.csv").string()});
    REQUIRE(cl.code == 0);
    const std::string c0 = slurp(dir / "c0.csv");
    CHECK(c0.find("sub000,papillary_included,") != std::string::npos);
    CHECK(c0.find("sub000,papillary_excluded,") != std::string::npos);

    const Result ba = cli({"bland-altman", "--a", (dir / "c0.csv").string(), "--b", (dir / "c0.csv").string(),
                           "--a-variant", "papillary_included", "--b-variant", "papillary_excluded", "--out",
                           (dir / "ba.csv").string()});
    CHECK(ba.code == 2);  // a single subject cannot give a spread

    const fs::path stl = dir / "meshes" / "lv.stl";  // parent directories are created
    REQUIRE(cli({"reconstruct", "--seg", (truth / "sub000_ED_mask.nii.gz").string(), "--label", "lv", "--out", stl.string()}).code == 0);
    CHECK((fs::file_size(stl) - 84) % 50 == 0);
    CHECK(cli({"reconstruct", "--seg", (truth / "sub000_ED_mask.nii.gz").string(), "--out", (dir / "lv.ply").string()}).code == 2);

    // nothing but the named outputs appeared at the top level
    CHECK(listing(dir.path()) ==
          std::vector<std::string>{"again", "c0.csv", "cleaned", "data", "m.csv", "masks", "meshes", "truth"});
}

TEST_CASE("bland-altman from CSV files") {
    oracle::TempDir dir("ba");
    std::ofstream(dir / "a.csv") << "subject,variant,edv_ml,esv_ml,sv_ml,lvef_percent,myo_mass_g\n"
                                    "s1,x,10,1,9,90,5\ns2,x,20,2,18,90,6\ns3,x,30,3,27,90,7\n";
    std::ofstream(dir / "b.csv") << "subject,variant,edv_ml,esv_ml,sv_ml,lvef_percent,myo_mass_g\n"
                                    "s3,x,33,3,30,90,7\ns1,x,12,1,11,90,5\ns2,x,19,2,17,90,6\n";
    const fs::path pts = dir / "pts";
    const Result r = cli({"bland-altman", "--a", (dir / "a.csv").string(), "--b", (dir / "b.csv").string(), "--out",
                          (dir / "ba.csv").string(), "--points", pts.string()});
    REQUIRE(r.code == 0);
    const std::string ba = slurp(dir / "ba.csv");
    CHECK(ba.find("edv_ml,-1.33333,2.08167,-5.4134,2.74673,3\n") != std::string::npos);
    CHECK(slurp(pts / "edv_ml_points.csv") == "mean,diff\n11,-2\n19.5,1\n31.5,-3\n");

    std::ofstream(dir / "bad.csv") << "subject,edv_ml\ns1,abc\ns2,1\n";
    CHECK(cli({"bland-altman", "--a", (dir / "bad.csv").string(), "--b", (dir / "a.csv").string(), "--out",
               (dir / "o.csv").string()}).code == 2);
}

TEST_CASE("error classes map to exit codes") {
    oracle::TempDir dir("codes");
    std::ofstream(dir / "junk.nii") << "not a nifti file at all";
    CHECK(cli({"reconstruct", "--seg", (dir / "junk.nii").string(), "--out", (dir / "o.stl").string()}).code == 2);
    std::ofstream(dir / "cfg.json") << R"({"epochs": 1, "bogus": 2})";
    CHECK(cli({"train", "--config", (dir / "cfg.json").string(), "--data", dir.path().string(), "--out",
               (dir / "m.csg").string()}).code == 2);
    std::ofstream(dir / "ok.json") << R"({"epochs": 1})";
    CHECK(cli({"train", "--config", (dir / "ok.json").string(), "--data", (dir / "none").string(), "--out",
               (dir / "m.csg").string()}).code == 4);
    CHECK(cli({"gradcheck", "--trials", "2", "--tolerance", "1e-30"}).code == 3);
    CHECK(cli({"gradcheck", "--trials", "2"}).code == 0);
}
