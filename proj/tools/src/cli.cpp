#include "cardioseg_cli/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>

#include <CLI11.hpp>

#include "cardioseg/clinical.hpp"
#include "cardioseg/errors.hpp"
#include "cardioseg/gradcheck.hpp"
#include "cardioseg/mesh.hpp"
#include "cardioseg/metrics.hpp"
#include "cardioseg/model_io.hpp"
#include "cardioseg/nifti.hpp"
#include "cardioseg/parallel.hpp"
#include "cardioseg/phantom.hpp"
#include "cardioseg/pipeline.hpp"
#include "cardioseg/training.hpp"

namespace cardioseg::cli {

namespace fs = std::filesystem;

namespace {

// Sorted NIfTI files of a directory, so runs are order-independent of the
// filesystem.
std::vector<fs::path> nifti_files(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && is_nifti_path(e.path())) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

// Mask files are those whose payload passes the label check.
std::optional<LabelMask> try_read_mask(const fs::path& p) {
    try {
        return read_mask(p);
    } catch (const NiftiError& e) {
        if (e.code() == NiftiErrorCode::LabelValues) return std::nullopt;
        throw;
    }
}

// "sub003_ES_mask.nii.gz" -> ("sub003", ES).
std::pair<std::string, Phase> subject_phase(const fs::path& p) {
    static const std::regex re("^(.*?)_(ED|ES)(_.*|\\..*)?$");
    const std::string name = p.filename().string();
    std::smatch m;
    if (std::regex_match(name, m, re)) return {m[1].str(), parse_phase(m[2].str())};
    std::string stem = name.substr(0, name.find('.'));
    return {stem, Phase::ED};
}

Connectivity parse_connectivity(const std::string& s) {
    return s == "volume26" ? Connectivity::Volume26 : Connectivity::Slice8;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name, const fs::path& src) const {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw FormatError(src.string() + ": missing column '" + name + "'");
        return static_cast<std::size_t>(it - header.begin());
    }
};

CsvTable read_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    CsvTable t;
    std::string line;
    if (!std::getline(in, line)) throw FormatError(path.string() + ": empty CSV");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    t.header = split_csv_line(line);
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto row = split_csv_line(line);
        if (row.size() != t.header.size()) throw FormatError(path.string() + ": ragged row '" + line + "'");
        t.rows.push_back(std::move(row));
    }
    return t;
}

double parse_number(const std::string& s, const fs::path& src) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw FormatError(src.string() + ": not a number: '" + s + "'");
    }
}

// subject -> row, optionally restricted to one variant.
std::map<std::string, std::vector<std::string>> rows_by_subject(const CsvTable& t, const std::string& variant,
                                                                 const fs::path& src) {
    const std::size_t sc = t.column("subject", src);
    const auto vit = std::find(t.header.begin(), t.header.end(), "variant");
    std::map<std::string, std::vector<std::string>> out;
    for (const auto& r : t.rows) {
        if (!variant.empty() && vit != t.header.end() &&
            r[static_cast<std::size_t>(vit - t.header.begin())] != variant)
            continue;
        if (!out.emplace(r[sc], r).second)
            throw FormatError(src.string() + ": subject '" + r[sc] + "' appears twice (use a variant filter)");
    }
    return out;
}

void ensure_parent(const fs::path& file) {
    const fs::path parent = file.parent_path();
    if (!parent.empty()) fs::create_directories(parent);
}

struct Flags {
    // phantom
    std::size_t count = 8;
    std::uint64_t seed = 0;
    std::string out;
    bool papillary = false;
    double noise = 0.05;
    // clean-masks
    std::string in;
    std::string connectivity = "slice8";
    // train
    std::string config, data, log, checkpoint, resume;
    // segment
    std::string model, image;
    bool keep_papillary = false;
    // eval
    std::string pred, gt, report, aggregation = "per-volume";
    bool clean_gt = false;
    // clinical
    std::string seg_ed, seg_es, raw_ed, raw_es, subject = "subject";
    // bland-altman
    std::string a, b, a_variant, b_variant, points;
    // reconstruct
    std::string seg, label = "lv";
    // gradcheck
    std::size_t trials = 20;
    double tolerance = 1e-5;
};

int cmd_phantom(const Flags& f, std::ostream& err) {
    CohortOptions o;
    o.count = f.count;
    o.seed = f.seed;
    o.papillary = f.papillary;
    o.noise_sigma = f.noise;
    const DatasetIndex idx = generate_cohort(o, f.out);
    err << "wrote " << idx.entries.size() << " volumes for " << o.count << " subjects to " << f.out << "\n";
    return kSuccess;
}

int cmd_clean(const Flags& f, std::ostream& err) {
    if (fs::exists(f.out) && fs::equivalent(f.in, f.out)) throw IoError("--out must differ from --in");
    fs::create_directories(f.out);
    const CleanOptions opt{parse_connectivity(f.connectivity)};
    std::size_t n = 0;
    for (const auto& p : nifti_files(f.in)) {
        const auto mask = try_read_mask(p);
        if (!mask) {
            err << "skipping " << p.filename().string() << " (not a label image)\n";
            continue;
        }
        const LabelMask cleaned = clean_mask(*mask, opt);
        write_nifti(cleaned, fs::path(f.out) / p.filename());
        err << p.filename().string() << ": " << mask->count(kMyocardium) - cleaned.count(kMyocardium)
            << " myocardium voxels relabeled\n";
        ++n;
    }
    err << "cleaned " << n << " masks\n";
    return kSuccess;
}

int cmd_train(const Flags& f, std::ostream& err) {
    const TrainConfig cfg = load_train_config(f.config);
    const fs::path data(f.data);
    DatasetIndex idx = load_index(fs::is_directory(data) ? data / "index.json" : data);
    if (std::any_of(idx.entries.begin(), idx.entries.end(),
                    [](const DatasetEntry& e) { return e.split == Split::Unassigned; }))
        idx = split_dataset(idx, SplitFractions{}, cfg.seed);
    ensure_parent(f.out);

    TrainOptions opt;
    if (!f.checkpoint.empty()) opt.checkpoint_path = f.checkpoint;
    if (!f.resume.empty()) opt.resume_from = f.resume;
    opt.on_epoch = [&err](const EpochLog& l) {
        err << "epoch " << l.epoch << " lr " << l.lr << " train_dice " << l.train_dice << " train_loss "
            << l.train_loss << " val_dice " << l.val_dice << "\n";
    };
    const TrainResult r = train(idx, cfg, opt);
    save_model(r.params, f.out);
    if (!f.log.empty()) {
        ensure_parent(f.log);
        write_text_file(f.log, r.log_csv);
    }
    err << "saved model (" << r.params.parameter_count() << " parameters) to " << f.out << "\n";
    return kSuccess;
}

int cmd_segment(const Flags& f, std::ostream& err) {
    const UNetParams params = load_model(f.model);
    const Volume image = read_nifti(f.image);
    SegmentOptions opt;
    opt.clean = !f.keep_papillary;
    opt.clean_options.connectivity = parse_connectivity(f.connectivity);
    const LabelMask mask = segment_volume(params, image, opt);
    ensure_parent(f.out);
    write_nifti(mask, f.out);
    err << "segmented " << f.image << ": myocardium " << mask.count(kMyocardium) << " voxels, LV cavity "
        << mask.count(kLvCavity) << " voxels\n";
    return kSuccess;
}

int cmd_eval(const Flags& f, std::ostream& err) {
    std::vector<MetricRow> rows;
    for (const auto& p : nifti_files(f.pred)) {
        const auto pred = try_read_mask(p);
        if (!pred) continue;
        const fs::path gt_path = fs::path(f.gt) / p.filename();
        if (!fs::exists(gt_path)) throw IoError("no ground truth for " + p.filename().string() + " in " + f.gt);
        LabelMask gt = read_mask(gt_path);
        if (f.clean_gt) gt = clean_mask(gt);
        const auto [subject, phase] = subject_phase(p);
        for (std::uint8_t label : {kMyocardium, kLvCavity})
            rows.push_back(make_row(subject, phase, label, confusion(*pred, gt, label)));
    }
    if (rows.empty()) throw FormatError("no prediction masks found in " + f.pred);
    const MetricsReport rep =
        aggregate_report(rows, f.aggregation == "pooled" ? Aggregation::Pooled : Aggregation::PerVolume);
    ensure_parent(f.report);
    write_metrics_csv(rep, f.report);
    err << format_summary(rep);
    return kSuccess;
}

int cmd_clinical(const Flags& f, std::ostream& err) {
    const LabelMask ed = read_mask(f.seg_ed);
    const LabelMask es = read_mask(f.seg_es);
    std::vector<ClinicalReport> reports;
    if (!f.raw_ed.empty() || !f.raw_es.empty()) {
        if (f.raw_ed.empty() || f.raw_es.empty()) throw std::invalid_argument("--raw-ed and --raw-es go together");
        const VariantComparison c = compare_variants(f.subject, read_mask(f.raw_ed), read_mask(f.raw_es), ed, es);
        reports = {c.included, c.excluded};
        if (!c.edv_increases || !c.esv_increases || !c.mass_decreases)
            err << "warning: exclusion did not move EDV/ESV up and mass down as expected\n";
    } else {
        reports = {clinical_report(f.subject, Variant::PapillaryExcluded, ed, es)};
    }
    for (const auto& r : reports) {
        if (r.esv_exceeds_edv) err << "warning: " << to_string(r.variant) << ": ESV exceeds EDV\n";
        err << to_string(r.variant) << ": EDV " << r.edv_ml << " mL, ESV " << r.esv_ml << " mL, LVEF "
            << r.lvef_percent << " %, mass " << r.myo_mass_g << " g\n";
    }
    ensure_parent(f.report);
    write_text_file(f.report, clinical_csv(reports));
    return kSuccess;
}

int cmd_bland_altman(const Flags& f, std::ostream& err) {
    const CsvTable ta = read_csv(f.a), tb = read_csv(f.b);
    const auto ra = rows_by_subject(ta, f.a_variant, f.a);
    const auto rb = rows_by_subject(tb, f.b_variant, f.b);
    std::vector<std::pair<std::string, BlandAltmanStats>> results;
    for (const std::string param : {"edv_ml", "esv_ml", "sv_ml", "lvef_percent", "myo_mass_g"}) {
        const auto ca = std::find(ta.header.begin(), ta.header.end(), param);
        const auto cb = std::find(tb.header.begin(), tb.header.end(), param);
        if (ca == ta.header.end() || cb == tb.header.end()) continue;
        const auto ia = static_cast<std::size_t>(ca - ta.header.begin());
        const auto ib = static_cast<std::size_t>(cb - tb.header.begin());
        std::vector<double> va, vb;
        for (const auto& [subject, row] : ra) {
            const auto it = rb.find(subject);
            if (it == rb.end()) continue;
            va.push_back(parse_number(row[ia], f.a));
            vb.push_back(parse_number(it->second[ib], f.b));
        }
        if (va.size() < 2) throw FormatError("bland-altman: fewer than two paired subjects for " + param);
        results.emplace_back(param, bland_altman(va, vb));
    }
    if (results.empty()) throw FormatError("bland-altman: no shared parameter columns");
    ensure_parent(f.out);
    write_text_file(f.out, bland_altman_csv(results));
    if (!f.points.empty()) {
        fs::create_directories(f.points);
        for (const auto& [param, s] : results)
            write_text_file(fs::path(f.points) / (param + "_points.csv"), bland_altman_points_csv(s));
    }
    for (const auto& [param, s] : results)
        err << param << ": bias " << s.bias << ", sd " << s.sd_diff << ", LoA [" << s.loa_low << ", " << s.loa_high
            << "], n " << s.n << "\n";
    return kSuccess;
}

int cmd_reconstruct(const Flags& f, std::ostream& err) {
    const LabelMask mask = read_mask(f.seg);
    const std::uint8_t label = f.label == "myo" ? kMyocardium : kLvCavity;
    const Mesh mesh = marching_cubes(mask, label);
    const std::string ext = fs::path(f.out).extension().string();
    if (ext != ".stl" && ext != ".obj") throw std::invalid_argument("--out must end in .stl or .obj");
    ensure_parent(f.out);
    if (ext == ".stl") export_stl(mesh, f.out);
    else export_obj(mesh, f.out);
    err << "mesh: " << mesh.vertices.size() << " vertices, " << mesh.triangles.size() << " triangles, enclosed "
        << mesh_volume_mm3(mesh) / 1000.0 << " mL\n";
    return kSuccess;
}

int cmd_gradcheck(const Flags& f, std::ostream& err) {
    const auto summary = run_layer_gradient_suite(f.seed, f.trials, f.tolerance);
    bool ok = true;
    for (const auto& s : summary) {
        err << s.layer << ": " << s.trials - s.failures << "/" << s.trials << " passed, worst error " << s.worst_error
            << "\n";
        ok = ok && s.failures == 0;
    }
    if (!ok) {
        err << "gradient check FAILED (tolerance " << f.tolerance << ")\n";
        return kNumeric;
    }
    err << "gradient check passed\n";
    return kSuccess;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Cardiac MRI segmentation toolkit: 3-D U-Net, papillary exclusion, clinical indices",
                 args.empty() ? "cardioseg" : args.front()};
    app.require_subcommand(1);
    std::size_t threads = 1;
    app.add_option("--threads", threads, "Worker threads for tensor kernels (1 = deterministic reference)")
        ->check(CLI::Range(std::size_t{1}, std::size_t{256}));

    Flags f;
    auto* phantom = app.add_subcommand("phantom", "Generate a synthetic ED/ES cohort with a dataset index");
    phantom->add_option("--count", f.count, "Number of subjects")->required()->check(CLI::PositiveNumber);
    phantom->add_option("--seed", f.seed, "Random seed")->required();
    phantom->add_option("--out", f.out, "Output directory")->required();
    phantom->add_flag("--papillary", f.papillary, "Add papillary-muscle blobs inside the cavity");
    phantom->add_option("--noise", f.noise, "Gaussian noise sigma")->check(CLI::NonNegativeNumber);

    auto* clean = app.add_subcommand("clean-masks", "Exclude papillary muscles from every mask in a directory");
    clean->add_option("--in", f.in, "Input directory")->required()->check(CLI::ExistingDirectory);
    clean->add_option("--out", f.out, "Output directory")->required();
    clean->add_option("--connectivity", f.connectivity, "slice8 or volume26")
        ->check(CLI::IsMember({"slice8", "volume26"}));

    auto* trn = app.add_subcommand("train", "Train a model on a dataset index");
    trn->add_option("--config", f.config, "Training config JSON")->required()->check(CLI::ExistingFile);
    trn->add_option("--data", f.data, "Dataset directory (with index.json) or index file")->required();
    trn->add_option("--out", f.out, "Output model file")->required();
    trn->add_option("--log", f.log, "Epoch log CSV");
    trn->add_option("--checkpoint", f.checkpoint, "Checkpoint file (written per checkpoint_every)");
    trn->add_option("--resume", f.resume, "Resume from a checkpoint")->check(CLI::ExistingFile);

    auto* seg = app.add_subcommand("segment", "Segment one image");
    seg->add_option("--model", f.model, "Model file")->required()->check(CLI::ExistingFile);
    seg->add_option("--image", f.image, "Input NIfTI image")->required()->check(CLI::ExistingFile);
    seg->add_option("--out", f.out, "Output mask (.nii or .nii.gz)")->required();
    seg->add_flag("--keep-papillary", f.keep_papillary, "Skip papillary-muscle exclusion");
    seg->add_option("--connectivity", f.connectivity, "slice8 or volume26")
        ->check(CLI::IsMember({"slice8", "volume26"}));

    auto* ev = app.add_subcommand("eval", "Compare predicted masks with ground truth");
    ev->add_option("--pred", f.pred, "Prediction directory")->required()->check(CLI::ExistingDirectory);
    ev->add_option("--gt", f.gt, "Ground-truth directory (same file names)")->required()->check(CLI::ExistingDirectory);
    ev->add_option("--report", f.report, "Metrics CSV")->required();
    ev->add_option("--aggregation", f.aggregation, "per-volume or pooled")
        ->check(CLI::IsMember({"per-volume", "pooled"}));
    ev->add_flag("--clean-gt", f.clean_gt, "Apply papillary exclusion to the ground truth first");

    auto* cl = app.add_subcommand("clinical", "EDV, ESV, LVEF and myocardial mass from ED/ES masks");
    cl->add_option("--seg-ed", f.seg_ed, "ED mask (papillary excluded)")->required()->check(CLI::ExistingFile);
    cl->add_option("--seg-es", f.seg_es, "ES mask (papillary excluded)")->required()->check(CLI::ExistingFile);
    cl->add_option("--raw-ed", f.raw_ed, "ED mask with papillary muscles")->check(CLI::ExistingFile);
    cl->add_option("--raw-es", f.raw_es, "ES mask with papillary muscles")->check(CLI::ExistingFile);
    cl->add_option("--subject", f.subject, "Subject id for the report");
    cl->add_option("--report", f.report, "Clinical CSV")->required();

    auto* ba = app.add_subcommand("bland-altman", "Agreement statistics between two clinical CSVs");
    ba->add_option("--a", f.a, "First clinical CSV")->required()->check(CLI::ExistingFile);
    ba->add_option("--b", f.b, "Second clinical CSV")->required()->check(CLI::ExistingFile);
    ba->add_option("--a-variant", f.a_variant, "Use only rows of this variant from --a");
    ba->add_option("--b-variant", f.b_variant, "Use only rows of this variant from --b");
    ba->add_option("--out", f.out, "Statistics CSV")->required();
    ba->add_option("--points", f.points, "Directory for per-parameter mean,diff point files");

    auto* rc = app.add_subcommand("reconstruct", "Surface mesh of one label");
    rc->add_option("--seg", f.seg, "Mask file")->required()->check(CLI::ExistingFile);
    rc->add_option("--label", f.label, "lv or myo")->check(CLI::IsMember({"lv", "myo"}));
    rc->add_option("--out", f.out, "Output .stl or .obj")->required();

    auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every layer's backward pass");
    gc->add_option("--seed", f.seed, "Random seed");
    gc->add_option("--trials", f.trials, "Random cases per layer")->check(CLI::PositiveNumber);
    gc->add_option("--tolerance", f.tolerance, "Maximum relative error")->check(CLI::PositiveNumber);

    std::vector<std::string> rest(args.size() > 1 ? args.begin() + 1 : args.end(), args.end());
    std::reverse(rest.begin(), rest.end());
    try {
        app.parse(rest);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            app.exit(e, out, err);
            return kSuccess;
        }
        err << e.what() << "\n";
        const auto subs = app.get_subcommands();
        err << (subs.empty() ? app.help() : subs.front()->help());
        return kUsage;
    }

    try {
        set_num_threads(threads);
        if (phantom->parsed()) return cmd_phantom(f, err);
        if (clean->parsed()) return cmd_clean(f, err);
        if (trn->parsed()) return cmd_train(f, err);
        if (seg->parsed()) return cmd_segment(f, err);
        if (ev->parsed()) return cmd_eval(f, err);
        if (cl->parsed()) return cmd_clinical(f, err);
        if (ba->parsed()) return cmd_bland_altman(f, err);
        if (rc->parsed()) return cmd_reconstruct(f, err);
        if (gc->parsed()) return cmd_gradcheck(f, err);
    } catch (const FormatError& e) {
        err << "error: " << e.what() << "\n";
        return kFormat;
    } catch (const NumericError& e) {
        err << "numeric failure: " << e.what() << "\n";
        return kNumeric;
    } catch (const IoError& e) {
        err << "I/O error: " << e.what() << "\n";
        return kIo;
    } catch (const fs::filesystem_error& e) {
        err << "I/O error: " << e.what() << "\n";
        return kIo;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << "\n";
        return kFormat;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kFormat;
    }
    return kUsage;
}

}  // namespace cardioseg::cli
