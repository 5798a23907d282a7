#pragma once

// Experiment driver behind the CLI: dataset evaluation, box-expansion sweep,
// input ablation, phantom generation and single-case metrics.
//
// Per-case randomness comes from Rng(mix_seed(seed, case_id)), so results do
// not depend on worker count or scheduling. Rows are always emitted in
// (patient_id, fraction_index) order. Standard deviations are population
// (divide by n). Failed cases are reported with status "failed" and excluded
// from aggregates.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "bbox.hpp"
#include "error.hpp"
#include "manifest.hpp"
#include "metrics.hpp"
#include "morphology.hpp"
#include "nifti.hpp"
#include "phantom.hpp"
#include "prompt.hpp"
#include "segmenter.hpp"

namespace sam2aug
{

namespace fs = std::filesystem;

/// Which of the three input channels are handed to the backend.
struct InputSelection
{
    bool cur_mr = true;
    bool pri_mr = true;
    bool pri_seg = true;

    std::string label() const
    {
        std::string s;
        auto add = [&](bool on, const char* n) {
            if (!on)
                return;
            if (!s.empty())
                s += "+";
            s += n;
        };
        add(cur_mr, "curMR");
        add(pri_mr, "priMR");
        add(pri_seg, "priSeg");
        return s.empty() ? "none" : s;
    }
};

/// Parse "curMR+priMR+priSeg" (also accepts ',' separators).
inline InputSelection parse_input_selection(const std::string& text)
{
    InputSelection sel{false, false, false};
    std::string tok;
    std::stringstream ss(text);
    while (std::getline(ss, tok, '+')) {
        std::stringstream inner(tok);
        std::string t;
        while (std::getline(inner, t, ',')) {
            if (t == "curMR")
                sel.cur_mr = true;
            else if (t == "priMR")
                sel.pri_mr = true;
            else if (t == "priSeg")
                sel.pri_seg = true;
            else if (!t.empty())
                fail(Errc::InvalidArgument, "unknown input channel '" + t + "'");
        }
    }
    return sel;
}

inline AugPolicy test_policy(int jitter_max)
{
    AugPolicy p;
    p.bbox_max_px = jitter_max;
    p.bbox_mode = BBoxMode::Test;
    return p;
}

struct EvalOptions
{
    std::string backend_label = "prior-oracle";
    AugPolicy policy = test_policy(5);
    std::uint64_t seed = 0;
    MetricConfig metrics;
    InputSelection inputs;
    fs::path out_dir = "out";
    int workers = 1;
    bool keep_predictions = true;
};

struct CaseRow
{
    std::string case_id;
    std::string patient_id;
    int fraction = 0;
    bool ok = false;
    std::string error;
    MetricReport metrics;
    double confidence = 0.0;
    int components = 0;
    std::optional<BBox3> bbox;
    Scenario selection = Scenario::Both;
};

struct Stat
{
    double mean = 0.0;
    double sd = 0.0;
    std::size_t n = 0;
};

inline Stat summarize(const std::vector<double>& xs)
{
    Stat s;
    s.n = xs.size();
    if (xs.empty())
        return s;
    for (double x : xs)
        s.mean += x;
    s.mean /= static_cast<double>(xs.size());
    for (double x : xs)
        s.sd += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(s.sd / static_cast<double>(xs.size()));
    return s;
}

struct Aggregate
{
    Stat dice, nsd, hd95, asd;
};

inline Aggregate aggregate(const std::vector<CaseRow>& rows)
{
    std::vector<double> d, n, h, a;
    for (const auto& r : rows) {
        if (!r.ok)
            continue;
        d.push_back(r.metrics.dice);
        n.push_back(r.metrics.nsd);
        if (r.metrics.hd95)
            h.push_back(*r.metrics.hd95);
        if (r.metrics.asd)
            a.push_back(*r.metrics.asd);
    }
    return {summarize(d), summarize(n), summarize(h), summarize(a)};
}

struct ExperimentReport
{
    nlohmann::json config;
    std::vector<CaseRow> rows;
    Aggregate agg;

    std::size_t failed() const
    {
        return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [](const CaseRow& r) { return !r.ok; }));
    }
};

inline nlohmann::json to_json(const Stat& s) { return {{"mean", s.mean}, {"sd", s.sd}, {"n", s.n}}; }

inline nlohmann::json report_json(const ExperimentReport& rep)
{
    nlohmann::json cases = nlohmann::json::array();
    for (const auto& r : rep.rows) {
        nlohmann::json c{{"case_id", r.case_id},
                         {"patient_id", r.patient_id},
                         {"fraction_index", r.fraction},
                         {"status", r.ok ? "ok" : "failed"}};
        if (r.ok) {
            c["metrics"] = r.metrics;
            c["confidence"] = r.confidence;
            c["selection"] = std::string(to_string(r.selection));
        } else {
            c["error"] = r.error;
        }
        c["gt_components"] = r.components;
        c["bbox"] = r.bbox ? nlohmann::json(r.bbox->to_array()) : nlohmann::json(nullptr);
        cases.push_back(std::move(c));
    }
    return {{"config", rep.config},
            {"cases", cases},
            {"aggregate",
             {{"dice", to_json(rep.agg.dice)},
              {"nsd", to_json(rep.agg.nsd)},
              {"hd95", to_json(rep.agg.hd95)},
              {"asd", to_json(rep.agg.asd)}}},
            {"summary", {{"n_cases", rep.rows.size()}, {"n_failed", rep.failed()}}}};
}

inline std::string report_csv(const ExperimentReport& rep)
{
    std::string out = std::string(metric_csv_header) + ",status\n";
    for (const auto& r : rep.rows) {
        if (r.ok)
            out += metric_csv_row(r.case_id, r.metrics) + ",ok\n";
        else
            out += r.case_id + ",NA,NA,NA,NA," + std::string(to_string(r.metrics.unit)) + "," +
                   format_number(r.metrics.tau) + ",NA,failed\n";
    }
    return out;
}

inline void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        fail(Errc::IoFailure, "cannot create " + path.string());
    out << text;
}

/// Run fn(i) for i in [0, n) on up to `workers` threads.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn)
{
    const auto w = static_cast<std::size_t>(std::clamp(workers, 1, 64));
    if (w == 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(w, n); ++t)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++)
                fn(i);
        });
    for (auto& th : pool)
        th.join();
}

// ---------------------------------------------------------------------------
// Shared per-case plumbing

/// Everything about one evaluated fraction that does not depend on the backend.
struct CaseContext
{
    ManifestCase entry;
    std::string case_id;
    BinaryMask truth;
    FractionRef prior;
    BBox3 tight_box; ///< union box over all ground-truth components
    int components = 0;
};

inline std::vector<CaseContext> evaluable_cases(const DatasetManifest& m, std::vector<CaseRow>* failures = nullptr)
{
    std::vector<CaseContext> out;
    for (const auto& c : m.sorted_cases()) {
        if (c.fraction_index < 1)
            continue;
        CaseContext ctx;
        ctx.entry = c;
        ctx.case_id = c.case_id();
        try {
            if (!c.current_mask)
                fail(Errc::ManifestError, ctx.case_id + ": no ground-truth mask");
            ctx.truth = read_nifti_mask(m.resolve(*c.current_mask));
            const auto scans = m.patient(c.patient_id);
            ctx.prior = select_prior(c.fraction_index, scans);
            if (ctx.prior.mask.empty())
                fail(Errc::ManifestError, ctx.case_id + ": prior has no mask");
            ctx.components = count_components(ctx.truth);
            ctx.tight_box = mask_bbox(ctx.truth);
            out.push_back(std::move(ctx));
        } catch (const Error& e) {
            if (!failures)
                throw;
            CaseRow row;
            row.case_id = ctx.case_id;
            row.patient_id = c.patient_id;
            row.fraction = c.fraction_index;
            row.error = e.what();
            failures->push_back(std::move(row));
        }
    }
    return out;
}

inline SegmentationRequest build_request(const CaseContext& ctx, const DatasetManifest& m,
                                         const InputSelection& sel, const std::optional<BBox3>& bbox,
                                         const std::optional<fs::path>& prompt_mask, const fs::path& out_dir)
{
    SegmentationRequest req;
    req.case_id = ctx.case_id;
    if (sel.cur_mr)
        req.inputs.current = m.resolve(ctx.entry.current_image);
    if (sel.pri_mr)
        req.inputs.prior = ctx.prior.image;
    if (sel.pri_seg) {
        req.inputs.prior_mask = ctx.prior.mask;
        req.prompts.mask = prompt_mask;
    }
    req.prompts.bbox = bbox;
    req.out_dir = out_dir;
    return req;
}

inline nlohmann::json eval_config_json(const EvalOptions& o, const std::string& manifest_label)
{
    return {{"backend", o.backend_label},
            {"seed", o.seed},
            {"policy", o.policy},
            {"tau", o.metrics.tau},
            {"unit", std::string(to_string(o.metrics.unit))},
            {"mode", std::string(to_string(o.metrics.mode))},
            {"inputs", o.inputs.label()},
            {"manifest", manifest_label},
            {"prompt_bbox_source", "ground-truth current mask"},
            {"sd", "population"}};
}

/// Evaluate every fraction >= 1: prompts from the ground-truth box and the
/// prior mask, augmented per policy (test mode: box jitter only), backend
/// call, metrics.
inline ExperimentReport run_eval(const DatasetManifest& m, Segmenter& backend, const EvalOptions& o,
                                 const std::string& manifest_label = "")
{
    validate(o.policy);
    ExperimentReport rep;
    rep.config = eval_config_json(o, manifest_label);
    std::vector<CaseRow> early_failures;
    const auto cases = evaluable_cases(m, &early_failures);
    std::vector<CaseRow> rows(cases.size());

    parallel_for(cases.size(), o.workers, [&](std::size_t i) {
        const auto& ctx = cases[i];
        auto& row = rows[i];
        row.case_id = ctx.case_id;
        row.patient_id = ctx.entry.patient_id;
        row.fraction = ctx.entry.fraction_index;
        row.components = ctx.components;
        row.metrics.unit = o.metrics.unit;
        row.metrics.tau = o.metrics.tau;
        try {
            const auto prior_mask = read_nifti_mask(ctx.prior.mask);
            Rng rng(mix_seed(o.seed, ctx.case_id));
            const auto prompts = augment_prompts(generate_prompts(ctx.truth, prior_mask), o.policy, rng);
            row.bbox = prompts.bbox;
            row.selection = prompts.selection;
            const fs::path case_dir = o.out_dir / "cases" / ctx.case_id;
            fs::create_directories(case_dir);
            std::optional<fs::path> prompt_mask;
            if (prompts.mask) {
                if (prompts.applied.morph_op == MorphOp::Identity) {
                    prompt_mask = fs::path(ctx.prior.mask);
                } else {
                    prompt_mask = case_dir / "prompt_mask.nii";
                    write_nifti(*prompts.mask, *prompt_mask);
                }
            }
            const auto req = build_request(ctx, m, o.inputs, prompts.bbox, prompt_mask, case_dir);
            const auto res = segment(req, backend, ctx.truth.geom);
            if (o.keep_predictions && !res.mask_path)
                write_nifti(res.mask, case_dir / "pred.nii");
            row.confidence = res.confidence;
            row.metrics = evaluate_case(ctx.truth, res.mask, o.metrics);
            row.ok = true;
        } catch (const std::exception& e) {
            row.ok = false;
            row.error = e.what();
        }
    });

    rows.insert(rows.end(), early_failures.begin(), early_failures.end());
    std::stable_sort(rows.begin(), rows.end(), [](const CaseRow& a, const CaseRow& b) {
        return a.patient_id != b.patient_id ? a.patient_id < b.patient_id : a.fraction < b.fraction;
    });
    rep.rows = std::move(rows);
    rep.agg = aggregate(rep.rows);
    return rep;
}

inline void write_report(const ExperimentReport& rep, const fs::path& out_dir)
{
    fs::create_directories(out_dir);
    write_text(out_dir / "report.json", report_json(rep).dump(2) + "\n");
    write_text(out_dir / "report.csv", report_csv(rep));
}

// ---------------------------------------------------------------------------
// Box-expansion sweep

struct SweepRow
{
    int level = 0;
    Stat dice;
};

struct SweepOptions
{
    int min_level = 1;
    int max_level = 10;
    int reps = 1;
    std::uint64_t seed = 0;
    fs::path out_dir = "out";
    int workers = 1;
};

/// For each level, every case x rep is prompted with the ground-truth box
/// expanded by exactly `level` voxels on a random non-empty subset of the
/// in-plane faces. The subset for a given (case, rep) is the same at every
/// level, so boxes grow monotonically with the level.
inline std::vector<SweepRow> run_sweep(const DatasetManifest& m, Segmenter& backend, const SweepOptions& o,
                                       const std::string& backend_label)
{
    if (o.min_level < 0 || o.max_level < o.min_level || o.reps < 1)
        fail(Errc::InvalidArgument, "sweep needs 0 <= min_level <= max_level and reps >= 1");
    const auto cases = evaluable_cases(m);
    std::vector<SweepRow> out;
    for (int level = o.min_level; level <= o.max_level; ++level) {
        const std::size_t total = cases.size() * static_cast<std::size_t>(o.reps);
        std::vector<std::optional<double>> dices(total);
        parallel_for(total, o.workers, [&](std::size_t idx) {
            const auto& ctx = cases[idx / static_cast<std::size_t>(o.reps)];
            const auto rep = static_cast<std::uint64_t>(idx % static_cast<std::size_t>(o.reps));
            try {
                Rng rng(mix_seed(mix_seed(o.seed, ctx.case_id), rep));
                const auto box = test_time_bbox_jitter(ctx.tight_box, 0, ctx.truth.dims(), rng, level);
                const fs::path dir = o.out_dir / "sweep" / backend_label / ("L" + std::to_string(level)) /
                                     (ctx.case_id + "_r" + std::to_string(rep));
                fs::create_directories(dir);
                const auto req = build_request(ctx, m, {}, box, fs::path(ctx.prior.mask), dir);
                const auto res = segment(req, backend, ctx.truth.geom);
                dices[idx] = dice(ctx.truth, res.mask);
            } catch (const std::exception&) {
                dices[idx].reset();
            }
        });
        std::vector<double> ok;
        for (const auto& d : dices)
            if (d)
                ok.push_back(*d);
        out.push_back({level, summarize(ok)});
    }
    return out;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows)
{
    std::string s = "level,mean_dice,sd_dice,n\n";
    for (const auto& r : rows)
        s += std::to_string(r.level) + "," + format_number(r.dice.mean) + "," + format_number(r.dice.sd) + "," +
             std::to_string(r.dice.n) + "\n";
    return s;
}

inline std::string file_label(const std::string& backend_spec)
{
    std::string out;
    for (char c : backend_spec)
        out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
    if (out.size() > 48)
        out.resize(48);
    return out;
}

// ---------------------------------------------------------------------------
// Input ablation

struct AblationRow
{
    std::string config;
    ExperimentReport report;
};

inline std::vector<AblationRow> run_ablation(const DatasetManifest& m, Segmenter& backend, EvalOptions o,
                                             const std::vector<InputSelection>& configs,
                                             const std::string& manifest_label = "")
{
    std::vector<AblationRow> out;
    const fs::path base = o.out_dir;
    for (const auto& sel : configs) {
        o.inputs = sel;
        o.out_dir = base / ("ablate_" + sel.label());
        out.push_back({sel.label(), run_eval(m, backend, o, manifest_label)});
    }
    return out;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows)
{
    std::string s = "config,n,n_failed,dice_mean,dice_sd,nsd_mean,nsd_sd,hd95_mean,hd95_sd,asd_mean,asd_sd\n";
    for (const auto& r : rows) {
        const auto& a = r.report.agg;
        s += r.config + "," + std::to_string(r.report.rows.size()) + "," + std::to_string(r.report.failed());
        for (const Stat* st : {&a.dice, &a.nsd, &a.hd95, &a.asd}) {
            if (st->n == 0)
                s += ",NA,NA";
            else
                s += "," + format_number(st->mean) + "," + format_number(st->sd);
        }
        s += "\n";
    }
    return s;
}

} // namespace sam2aug
