#ifndef SCARNET_DATASET_HPP
#define SCARNET_DATASET_HPP

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "scarnet/errors.hpp"
#include "scarnet/image.hpp"
#include "scarnet/phantom.hpp"

namespace scarnet {

struct Sample {
    std::string id;
    GrayImage image;
    ClassMask mask;
    PhantomSpec spec; // generating recipe, kept for seed-replay verification
};

namespace detail {

inline void write_image_file(const std::filesystem::path& path, const GrayImage& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw data_error("cannot open for writing: " + path.string());
    f << img.height << " " << img.width << "\n";
    std::vector<float> buf(img.size());
    for (std::size_t i = 0; i < img.size(); ++i)
        buf[i] = static_cast<float>(img.pixels[i]);
    f.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!f)
        throw data_error("short write: " + path.string());
}

inline GrayImage read_image_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw data_error("cannot open: " + path.string());
    int h = 0, w = 0;
    f >> h >> w;
    f.get(); // newline
    if (!f || h < 1 || w < 1)
        throw data_error("bad header line in " + path.string());
    GrayImage img(h, w);
    std::vector<float> buf(img.size());
    f.read(reinterpret_cast<char*>(buf.data()),
           static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (f.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float)))
        throw data_error("truncated pixel data in " + path.string());
    for (std::size_t i = 0; i < img.size(); ++i)
        img.pixels[i] = static_cast<double>(buf[i]);
    return img;
}

inline void write_mask_file(const std::filesystem::path& path, const ClassMask& mask) {
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw data_error("cannot open for writing: " + path.string());
    f << mask.height << " " << mask.width << "\n";
    f.write(reinterpret_cast<const char*>(mask.labels.data()),
            static_cast<std::streamsize>(mask.labels.size()));
    if (!f)
        throw data_error("short write: " + path.string());
}

inline ClassMask read_mask_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw data_error("cannot open: " + path.string());
    int h = 0, w = 0;
    f >> h >> w;
    f.get();
    if (!f || h < 1 || w < 1)
        throw data_error("bad header line in " + path.string());
    ClassMask mask(h, w);
    f.read(reinterpret_cast<char*>(mask.labels.data()),
           static_cast<std::streamsize>(mask.labels.size()));
    if (f.gcount() != static_cast<std::streamsize>(mask.labels.size()))
        throw data_error("truncated label data in " + path.string());
    for (std::uint8_t v : mask.labels)
        if (v > 3)
            throw data_error("label out of range {0..3} in " + path.string());
    return mask;
}

inline nlohmann::json spec_to_json(const PhantomSpec& s) {
    return nlohmann::json{{"height", s.height},
                          {"width", s.width},
                          {"center_row", s.center_row},
                          {"center_col", s.center_col},
                          {"inner_radius", s.inner_radius},
                          {"outer_radius", s.outer_radius},
                          {"scar_arc_start", s.scar_arc_start},
                          {"scar_arc_extent", s.scar_arc_extent},
                          {"intensity_means", s.intensity_means},
                          {"intensity_noise_sigma", s.intensity_noise_sigma},
                          {"seed", s.seed}};
}

template <typename T>
inline T manifest_field(const nlohmann::json& j, const std::string& obj_name,
                        const std::string& key) {
    if (!j.contains(key))
        throw data_error("manifest: " + obj_name + " missing field '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw data_error("manifest: " + obj_name + " field '" + key + "' has wrong type");
    }
}

inline PhantomSpec spec_from_json(const nlohmann::json& j, const std::string& obj_name) {
    PhantomSpec s;
    s.height = manifest_field<int>(j, obj_name, "height");
    s.width = manifest_field<int>(j, obj_name, "width");
    s.center_row = manifest_field<double>(j, obj_name, "center_row");
    s.center_col = manifest_field<double>(j, obj_name, "center_col");
    s.inner_radius = manifest_field<double>(j, obj_name, "inner_radius");
    s.outer_radius = manifest_field<double>(j, obj_name, "outer_radius");
    s.scar_arc_start = manifest_field<double>(j, obj_name, "scar_arc_start");
    s.scar_arc_extent = manifest_field<double>(j, obj_name, "scar_arc_extent");
    s.intensity_means = manifest_field<std::array<double, 4>>(j, obj_name, "intensity_means");
    s.intensity_noise_sigma = manifest_field<double>(j, obj_name, "intensity_noise_sigma");
    s.seed = manifest_field<std::uint64_t>(j, obj_name, "seed");
    return s;
}

} // namespace detail

// Layout: <dir>/manifest (JSON text), plus img_<id> (header line "H W", raw
// little-endian float32, row-major) and msk_<id> (same header, raw uint8).
inline void dataset_write(const std::filesystem::path& dir, const std::vector<Sample>& samples) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    nlohmann::json manifest;
    manifest["version"] = 1;
    manifest["samples"] = nlohmann::json::array();
    for (const Sample& s : samples) {
        detail::write_image_file(dir / ("img_" + s.id), s.image);
        detail::write_mask_file(dir / ("msk_" + s.id), s.mask);
        nlohmann::json entry;
        entry["id"] = s.id;
        entry["seed"] = s.spec.seed;
        entry["spec"] = detail::spec_to_json(s.spec);
        manifest["samples"].push_back(entry);
    }
    std::ofstream f(dir / "manifest");
    if (!f)
        throw data_error("cannot write manifest in " + dir.string());
    f << manifest.dump(2) << "\n";
}

inline std::vector<Sample> dataset_read(const std::filesystem::path& dir) {
    if (!std::filesystem::exists(dir))
        throw data_error("dataset path not found: " + dir.string());
    const std::filesystem::path mpath = dir / "manifest";
    if (!std::filesystem::exists(mpath))
        throw data_error("manifest not found: " + mpath.string());
    std::ifstream f(mpath);
    nlohmann::json manifest;
    try {
        f >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw data_error("manifest " + mpath.string() + ": parse error: " + e.what());
    }
    if (!manifest.contains("samples") || !manifest["samples"].is_array())
        throw data_error("manifest " + mpath.string() + ": missing field 'samples'");
    std::vector<Sample> out;
    std::size_t idx = 0;
    for (const auto& entry : manifest["samples"]) {
        const std::string obj_name = "sample " + std::to_string(idx++);
        Sample s;
        s.id = detail::manifest_field<std::string>(entry, obj_name, "id");
        if (!entry.contains("spec"))
            throw data_error("manifest: " + obj_name + " missing field 'spec'");
        s.spec = detail::spec_from_json(entry["spec"], obj_name + ".spec");
        s.image = detail::read_image_file(dir / ("img_" + s.id));
        s.mask = detail::read_mask_file(dir / ("msk_" + s.id));
        if (s.image.height != s.mask.height || s.image.width != s.mask.width)
            throw data_error("sample " + s.id + ": image/mask dimensions disagree");
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace scarnet

#endif
