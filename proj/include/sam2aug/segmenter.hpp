#pragma once

// Uniform segmenter contract: a request (file references for the current
// image, prior image, prior mask, plus optional box / mask prompts) returns a
// binary mask on the current grid and a confidence in [0,1].
//
// Built-in backends:
//   propagate     rigid registration of prior onto current, prior mask warped
//   prior-oracle  prior mask clipped to the box prompt
// External backends speak JSON lines over a child's stdin/stdout:
//   -> {"type":"hello","version":1}
//   <- {"type":"ready","name":..,"capabilities":[..]}
//   -> {"type":"segment","case_id":..,"inputs":{"current","prior","prior_mask"},
//       "prompts":{"bbox":[x0,y0,z0,x1,y1,z1]|null,"mask":..},"out_dir":..}
//   <- {"type":"result","case_id":..,"mask":<path>,"confidence":..}
//      or {"type":"error","case_id":..,"message":..}
//   -> {"type":"bye"}

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "bbox.hpp"
#include "error.hpp"
#include "image.hpp"
#include "nifti.hpp"
#include "registration.hpp"
#include "subprocess.hpp"

namespace sam2aug
{

inline constexpr int protocol_version = 1;

struct SegmentationInputs
{
    std::optional<std::filesystem::path> current;
    std::optional<std::filesystem::path> prior;
    std::optional<std::filesystem::path> prior_mask;
};

struct SegmentationPrompts
{
    std::optional<BBox3> bbox;
    std::optional<std::filesystem::path> mask;
};

struct SegmentationRequest
{
    std::string case_id;
    SegmentationInputs inputs;
    SegmentationPrompts prompts;
    std::map<std::string, std::string> options;
    std::filesystem::path out_dir;
};

struct SegmentationResult
{
    std::string case_id;
    BinaryMask mask;
    std::optional<std::filesystem::path> mask_path;
    double confidence = 0.0;
};

namespace detail
{

inline nlohmann::json optional_path(const std::optional<std::filesystem::path>& p)
{
    return p ? nlohmann::json(p->string()) : nlohmann::json(nullptr);
}

} // namespace detail

inline nlohmann::json request_to_json(const SegmentationRequest& r)
{
    nlohmann::json j{
        {"type", "segment"},
        {"case_id", r.case_id},
        {"inputs",
         {{"current", detail::optional_path(r.inputs.current)},
          {"prior", detail::optional_path(r.inputs.prior)},
          {"prior_mask", detail::optional_path(r.inputs.prior_mask)}}},
        {"prompts",
         {{"bbox", r.prompts.bbox ? nlohmann::json(r.prompts.bbox->to_array()) : nlohmann::json(nullptr)},
          {"mask", detail::optional_path(r.prompts.mask)}}},
        {"out_dir", r.out_dir.string()},
    };
    if (!r.options.empty())
        j["options"] = r.options;
    return j;
}

/// Parses a "segment" message (adapter side of the protocol; also used by tests).
inline SegmentationRequest request_from_json(const nlohmann::json& j)
{
    auto opt = [](const nlohmann::json& v) -> std::optional<std::filesystem::path> {
        if (v.is_null())
            return std::nullopt;
        return std::filesystem::path(v.get<std::string>());
    };
    try {
        if (j.at("type") != "segment")
            fail(Errc::ProtocolViolation, "expected a segment message");
        SegmentationRequest r;
        r.case_id = j.at("case_id").get<std::string>();
        const auto& in = j.at("inputs");
        r.inputs = {opt(in.at("current")), opt(in.at("prior")), opt(in.at("prior_mask"))};
        const auto& pr = j.at("prompts");
        if (!pr.at("bbox").is_null())
            r.prompts.bbox = BBox3::from_array(pr.at("bbox").get<std::array<int, 6>>());
        r.prompts.mask = opt(pr.at("mask"));
        r.out_dir = j.at("out_dir").get<std::string>();
        if (j.contains("options"))
            r.options = j.at("options").get<std::map<std::string, std::string>>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        fail(Errc::ProtocolViolation, e.what());
    }
}

/// Backend interface. Implementations return raw results; segment() below
/// enforces the result invariants.
class Segmenter
{
public:
    virtual ~Segmenter() = default;
    virtual std::string name() const = 0;
    virtual std::vector<std::string> capabilities() const = 0;
    virtual SegmentationResult run(const SegmentationRequest& req) = 0;
};

/// Geometry the result must match: the current image's, falling back to the
/// prior image, prior mask and mask prompt when the current image is withheld.
inline Geometry request_geometry(const SegmentationRequest& req)
{
    for (const auto* p : {&req.inputs.current, &req.inputs.prior, &req.inputs.prior_mask, &req.prompts.mask})
        if (*p) {
            const auto bytes = nifti::detail::read_file(**p);
            return nifti::parse_header(bytes).geom;
        }
    fail(Errc::MissingInput, req.case_id + ": request carries no image reference");
}

/// Check request-side invariants against the expected grid.
inline void validate_request(const SegmentationRequest& req, const Geometry& grid)
{
    if (req.prompts.bbox && (!req.prompts.bbox->valid() || !req.prompts.bbox->within(grid.dims)))
        fail(Errc::GeometryMismatch, req.case_id + ": bbox " + to_string(*req.prompts.bbox) + " outside the grid");
    for (const auto* p : {&req.inputs.prior, &req.inputs.prior_mask, &req.prompts.mask})
        if (*p) {
            const auto bytes = nifti::detail::read_file(**p);
            if (nifti::parse_header(bytes).geom.dims != grid.dims)
                fail(Errc::GeometryMismatch, req.case_id + ": " + (*p)->string() + " does not match the current grid");
        }
}

/// Dispatch to a backend and enforce the result contract: binary mask on the
/// expected grid, confidence in [0,1], matching case id.
inline SegmentationResult segment(const SegmentationRequest& req, Segmenter& backend,
                                  std::optional<Geometry> expected = std::nullopt)
{
    const Geometry grid = expected ? *expected : request_geometry(req);
    validate_request(req, grid);
    auto res = backend.run(req);
    if (res.case_id != req.case_id)
        fail(Errc::ProtocolViolation, "result for case '" + res.case_id + "', expected '" + req.case_id + "'");
    if (res.mask.dims() != grid.dims || res.mask.size() != grid.voxel_count())
        fail(Errc::ProtocolViolation, req.case_id + ": result mask does not match the current image geometry");
    if (!is_binary(res.mask))
        fail(Errc::ProtocolViolation, req.case_id + ": result mask is not binary");
    if (!(res.confidence >= 0.0 && res.confidence <= 1.0))
        fail(Errc::ProtocolViolation, req.case_id + ": confidence outside [0,1]");
    return res;
}

// ---------------------------------------------------------------------------
// Built-ins

/// mask = prior mask clipped to the box prompt; confidence 1.
inline SegmentationResult prior_oracle_segmenter(const SegmentationRequest& req)
{
    const auto& mask_path = req.prompts.mask ? req.prompts.mask : req.inputs.prior_mask;
    if (!mask_path)
        fail(Errc::MissingPrompt, req.case_id + ": prior-oracle needs a prior mask prompt");
    if (!req.prompts.bbox)
        fail(Errc::MissingPrompt, req.case_id + ": prior-oracle needs a bbox prompt");
    const auto prior = read_nifti_mask(*mask_path);
    return {req.case_id, clip_to_bbox(prior, *req.prompts.bbox), std::nullopt, 1.0};
}

/// Register current (fixed) against prior (moving) and warp the prior mask.
/// Confidence is 1 - normalized final cost, clamped to [0,1]: MSE is divided
/// by the current image's intensity variance; NCC cost is already 1 - ncc.
inline SegmentationResult propagate_segmenter(const SegmentationRequest& req, const RegConfig& cfg = {})
{
    if (!req.inputs.current || !req.inputs.prior || !req.inputs.prior_mask)
        fail(Errc::MissingInput, req.case_id + ": propagate needs current, prior and prior_mask");
    const auto current = read_nifti(*req.inputs.current);
    const auto prior = read_nifti(*req.inputs.prior);
    const auto prior_mask = read_nifti_mask(*req.inputs.prior_mask);
    require_same_dims(prior.geom, prior_mask.geom, "prior image vs prior mask");
    const auto reg = register_rigid(current, prior, cfg);
    SegmentationResult res{req.case_id, propagate_mask(prior_mask, reg.transform, current.geom), std::nullopt, 0.0};
    double normalized = reg.final_cost;
    if (cfg.metric == SimilarityMetric::Mse) {
        double mean = 0.0, var = 0.0;
        for (float v : current.data)
            mean += v;
        mean /= static_cast<double>(current.size());
        for (float v : current.data)
            var += (v - mean) * (v - mean);
        var /= static_cast<double>(current.size());
        normalized = var > 0.0 ? reg.final_cost / var : 1.0;
    }
    res.confidence = std::clamp(1.0 - normalized, 0.0, 1.0);
    return res;
}

class PropagateBackend : public Segmenter
{
public:
    explicit PropagateBackend(RegConfig cfg = {}) : cfg_(std::move(cfg)) {}
    std::string name() const override { return "propagate"; }
    std::vector<std::string> capabilities() const override { return {"prior"}; }
    SegmentationResult run(const SegmentationRequest& req) override { return propagate_segmenter(req, cfg_); }

private:
    RegConfig cfg_;
};

class PriorOracleBackend : public Segmenter
{
public:
    std::string name() const override { return "prior-oracle"; }
    std::vector<std::string> capabilities() const override { return {"bbox", "mask", "prior"}; }
    SegmentationResult run(const SegmentationRequest& req) override { return prior_oracle_segmenter(req); }
};

// ---------------------------------------------------------------------------
// External adapters

struct ExternalOptions
{
    std::chrono::milliseconds handshake_timeout{30'000};
    std::chrono::milliseconds request_timeout{300'000};
};

/// A child process speaking the JSON-lines protocol. One request in flight at
/// a time; concurrent callers queue on an internal mutex.
class ExternalBackend : public Segmenter
{
public:
    ExternalBackend(const std::string& command, ExternalOptions opts = {}) : opts_(opts)
    {
        proc_ = std::make_unique<Subprocess>(command);
        handshake();
    }

    ~ExternalBackend() override
    {
        if (proc_ && alive_) {
            proc_->write_line(nlohmann::json{{"type", "bye"}}.dump());
            proc_->wait_exit(std::chrono::milliseconds(5000));
        }
    }

    std::string name() const override { return name_; }
    std::vector<std::string> capabilities() const override { return capabilities_; }

    SegmentationResult run(const SegmentationRequest& req) override
    {
        std::lock_guard lock(mutex_);
        if (!alive_)
            fail(Errc::BackendFailure, "adapter '" + name_ + "' is no longer running");
        std::error_code ec;
        std::filesystem::create_directories(req.out_dir, ec);
        if (!proc_->write_line(request_to_json(req).dump()))
            dead("adapter closed its input");
        std::string line;
        switch (proc_->read_line(line, opts_.request_timeout)) {
        case Subprocess::ReadStatus::Line: break;
        case Subprocess::ReadStatus::Timeout:
            alive_ = false;
            proc_->kill();
            fail(Errc::BackendFailure, req.case_id + ": adapter timed out");
        case Subprocess::ReadStatus::Eof: dead("adapter exited mid-request");
        }
        nlohmann::json msg;
        try {
            msg = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception&) {
            fail(Errc::ProtocolViolation, "malformed response line: " + line);
        }
        try {
            const auto type = msg.at("type").get<std::string>();
            if (type == "error")
                fail(Errc::BackendFailure, req.case_id + ": " + msg.value("message", std::string("adapter error")));
            if (type != "result")
                fail(Errc::ProtocolViolation, "unexpected message type '" + type + "'");
            SegmentationResult res;
            res.case_id = msg.at("case_id").get<std::string>();
            res.mask_path = std::filesystem::path(msg.at("mask").get<std::string>());
            res.confidence = msg.at("confidence").get<double>();
            try {
                res.mask = read_nifti_mask(*res.mask_path);
            } catch (const Error& e) {
                fail(Errc::ProtocolViolation, std::string("result mask unreadable: ") + e.what());
            }
            return res;
        } catch (const nlohmann::json::exception& e) {
            fail(Errc::ProtocolViolation, std::string("bad response: ") + e.what());
        }
    }

    std::string stderr_text() const { return proc_->stderr_text(); }

private:
    [[noreturn]] void dead(const std::string& what)
    {
        alive_ = false;
        proc_->wait_exit(std::chrono::milliseconds(1000));
        const auto err = proc_->stderr_text(std::chrono::milliseconds(1000));
        fail(Errc::BackendFailure, what + (err.empty() ? std::string() : "; stderr: " + err));
    }

    void handshake()
    {
        if (!proc_->write_line(nlohmann::json{{"type", "hello"}, {"version", protocol_version}}.dump()))
            fail(Errc::SpawnFailure, "adapter closed its input before the handshake");
        std::string line;
        switch (proc_->read_line(line, opts_.handshake_timeout)) {
        case Subprocess::ReadStatus::Line: break;
        case Subprocess::ReadStatus::Timeout:
            proc_->kill();
            fail(Errc::HandshakeTimeout, "no ready message from adapter");
        case Subprocess::ReadStatus::Eof: {
            proc_->wait_exit(std::chrono::milliseconds(1000));
            fail(Errc::SpawnFailure, "adapter exited during handshake; stderr: " +
                                         proc_->stderr_text(std::chrono::milliseconds(1000)));
        }
        }
        nlohmann::json msg;
        try {
            msg = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception&) {
            proc_->kill();
            fail(Errc::ProtocolViolation, "malformed handshake line: " + line);
        }
        const auto type = msg.value("type", std::string());
        if (type == "error") {
            proc_->kill();
            const auto text = msg.value("message", std::string());
            if (text.find("version") != std::string::npos)
                fail(Errc::VersionMismatch, text);
            fail(Errc::ProtocolViolation, "adapter refused handshake: " + text);
        }
        if (msg.contains("version") && msg.at("version") != protocol_version) {
            proc_->kill();
            fail(Errc::VersionMismatch, "adapter speaks version " + msg.at("version").dump());
        }
        try {
            if (type != "ready")
                fail(Errc::ProtocolViolation, "expected a ready message, got '" + type + "'");
            name_ = msg.at("name").get<std::string>();
            capabilities_ = msg.at("capabilities").get<std::vector<std::string>>();
        } catch (const nlohmann::json::exception& e) {
            proc_->kill();
            fail(Errc::ProtocolViolation, e.what());
        }
        static const std::set<std::string> known{"bbox", "mask", "prior"};
        for (const auto& c : capabilities_)
            if (!known.count(c)) {
                proc_->kill();
                fail(Errc::ProtocolViolation, "unknown capability '" + c + "'");
            }
        alive_ = true;
    }

    ExternalOptions opts_;
    std::unique_ptr<Subprocess> proc_;
    std::string name_;
    std::vector<std::string> capabilities_;
    bool alive_ = false;
    std::mutex mutex_;
};

inline std::unique_ptr<ExternalBackend> spawn_external(const std::string& command, ExternalOptions opts = {})
{
    return std::make_unique<ExternalBackend>(command, opts);
}

/// "propagate", "prior-oracle" or "external:<command line>".
inline std::unique_ptr<Segmenter> make_backend(const std::string& spec, const RegConfig& reg = {},
                                               ExternalOptions ext = {})
{
    if (spec == "propagate")
        return std::make_unique<PropagateBackend>(reg);
    if (spec == "prior-oracle")
        return std::make_unique<PriorOracleBackend>();
    constexpr std::string_view prefix = "external:";
    if (spec.rfind(prefix, 0) == 0 && spec.size() > prefix.size())
        return spawn_external(spec.substr(prefix.size()), ext);
    fail(Errc::InvalidArgument, "unknown backend '" + spec + "'");
}

} // namespace sam2aug
