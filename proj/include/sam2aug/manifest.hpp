#pragma once

// Dataset manifest (format_version 1):
//   {"format_version": 1, "root": ".", "cases": [
//      {"patient_id": "P000", "fraction_index": 0,
//       "current_image": "P000/f0_image.nii", "current_mask": "P000/f0_mask.nii"}, ...]}
// Relative paths resolve against root; a relative root resolves against the
// manifest file's directory. Fraction 0 is the simulation scan.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "prompt.hpp"

namespace sam2aug
{

struct ManifestCase
{
    std::string patient_id;
    int fraction_index = 0;
    std::string current_image;
    std::optional<std::string> current_mask;

    std::string case_id() const { return patient_id + "_f" + std::to_string(fraction_index); }
};

struct DatasetManifest
{
    int format_version = 1;
    std::filesystem::path root = ".";
    std::vector<ManifestCase> cases;

    std::filesystem::path resolve(const std::string& rel) const
    {
        const std::filesystem::path p(rel);
        return p.is_absolute() ? p : root / p;
    }

    /// Scans of one patient, ordered by fraction.
    std::vector<FractionRef> patient(const std::string& patient_id) const
    {
        std::vector<FractionRef> out;
        for (const auto& c : cases)
            if (c.patient_id == patient_id)
                out.push_back({c.fraction_index, resolve(c.current_image).string(),
                               c.current_mask ? resolve(*c.current_mask).string() : std::string{}});
        std::sort(out.begin(), out.end(),
                  [](const FractionRef& a, const FractionRef& b) { return a.fraction_index < b.fraction_index; });
        return out;
    }

    /// Cases sorted by (patient_id, fraction_index).
    std::vector<ManifestCase> sorted_cases() const
    {
        auto out = cases;
        std::sort(out.begin(), out.end(), [](const ManifestCase& a, const ManifestCase& b) {
            return a.patient_id != b.patient_id ? a.patient_id < b.patient_id : a.fraction_index < b.fraction_index;
        });
        return out;
    }
};

/// Checks structure and that referenced files exist. With require_masks,
/// every scan must carry a ground-truth mask.
inline void validate(const DatasetManifest& m, bool require_masks = false)
{
    if (m.format_version != 1)
        fail(Errc::ManifestError, "format_version must be 1");
    if (m.cases.empty())
        fail(Errc::ManifestError, "manifest has no cases");
    std::map<std::string, std::set<int>> fractions;
    for (const auto& c : m.cases) {
        if (c.patient_id.empty())
            fail(Errc::ManifestError, "empty patient_id");
        if (c.fraction_index < 0)
            fail(Errc::ManifestError, c.case_id() + ": negative fraction_index");
        if (!fractions[c.patient_id].insert(c.fraction_index).second)
            fail(Errc::ManifestError, c.case_id() + ": duplicate fraction");
        if (!std::filesystem::exists(m.resolve(c.current_image)))
            fail(Errc::ManifestError, c.case_id() + ": missing image " + m.resolve(c.current_image).string());
        if (c.current_mask && !std::filesystem::exists(m.resolve(*c.current_mask)))
            fail(Errc::ManifestError, c.case_id() + ": missing mask " + m.resolve(*c.current_mask).string());
        if (require_masks && !c.current_mask)
            fail(Errc::ManifestError, c.case_id() + ": ground-truth mask required");
    }
    for (const auto& [pid, fr] : fractions) {
        if (!fr.count(0))
            fail(Errc::ManifestError, pid + ": no simulation scan (fraction 0)");
        if (*fr.rbegin() != static_cast<int>(fr.size()) - 1)
            fail(Errc::ManifestError, pid + ": fraction indices are not contiguous from 0");
    }
}

inline nlohmann::json to_json(const DatasetManifest& m)
{
    nlohmann::json cases = nlohmann::json::array();
    for (const auto& c : m.cases) {
        nlohmann::json e{{"patient_id", c.patient_id},
                         {"fraction_index", c.fraction_index},
                         {"current_image", c.current_image}};
        e["current_mask"] = c.current_mask ? nlohmann::json(*c.current_mask) : nlohmann::json(nullptr);
        cases.push_back(std::move(e));
    }
    return {{"format_version", m.format_version}, {"root", m.root.generic_string()}, {"cases", cases}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir)
{
    DatasetManifest m;
    try {
        m.format_version = j.at("format_version").get<int>();
        std::filesystem::path root = j.value("root", std::string("."));
        m.root = root.is_absolute() ? root : base_dir / root;
        for (const auto& e : j.at("cases")) {
            ManifestCase c;
            c.patient_id = e.at("patient_id").get<std::string>();
            c.fraction_index = e.at("fraction_index").get<int>();
            c.current_image = e.at("current_image").get<std::string>();
            if (e.contains("current_mask") && !e.at("current_mask").is_null())
                c.current_mask = e.at("current_mask").get<std::string>();
            m.cases.push_back(std::move(c));
        }
    } catch (const nlohmann::json::exception& e) {
        fail(Errc::ManifestError, e.what());
    }
    return m;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path, bool require_masks = false)
{
    std::ifstream in(path);
    if (!in)
        fail(Errc::ManifestError, "cannot open manifest " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(Errc::ManifestError, path.string() + ": " + e.what());
    }
    auto m = manifest_from_json(j, path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
    validate(m, require_masks);
    return m;
}

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out)
        fail(Errc::IoFailure, "cannot create " + path.string());
    out << to_json(m).dump(2) << '\n';
}

} // namespace sam2aug
