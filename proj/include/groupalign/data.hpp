#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "groupalign/image_io.hpp"
#include "groupalign/seg_model.hpp"

namespace groupalign {

namespace fs = std::filesystem;

// Appearance-only domain shift applied to target images. Geometry and labels
// never see it.
struct ShiftSpec {
    double hue_delta = 0.38;        // hue rotation in turns
    double brightness_delta = -0.10;
    double noise_sigma = 0.05;
    int texture_mode = 1;  // 0 = none, 1 = multiplicative sinusoid
};

// Desk-scale two-domain shape dataset. Five classes by default: background,
// circle, square, triangle (deliberately rare), stripe. Every class has two
// appearance modes so the pooled distribution is multi-modal.
struct SyntheticSpec {
    int cls = 5;
    int height = 64, width = 64;
    int n_source = 200, n_target = 200;
    int n_val = 32;  // per domain
    ShiftSpec shift;
    // target pixel shares; index 3 (triangle) is the rare class
    std::vector<double> class_frequency{0.70, 0.11, 0.08, 0.008, 0.10};
    long long seed = 1;

    void validate() const {
        if (cls != 5) throw ConfigError("synthetic generator supports cls=5");
        if (height < 32 || width < 32 || height % 32 != 0 || width % 32 != 0)
            throw ConfigError("synthetic image size must be >= 32 and divisible by 32");
        if (n_source < 1 || n_target < 1 || n_val < 1)
            throw ConfigError("synthetic counts must be >= 1");
    }
};

enum class Split { train, val };

inline const char* split_name(Split s) { return s == Split::train ? "train" : "val"; }

struct ManifestItem {
    Split split = Split::train;
    Domain domain = Domain::source;
    std::string image_path;                 // relative to root
    std::optional<std::string> label_path;  // NONE for target train items
};

struct DatasetManifest {
    std::string root;
    int cls = 5;
    int ignore = kIgnoreLabel;
    int height = 0, width = 0;
    std::vector<std::string> class_names;
    std::vector<std::array<std::uint8_t, 3>> palette;
    std::vector<ManifestItem> items;

    std::vector<const ManifestItem*> select(Split split, Domain domain) const {
        std::vector<const ManifestItem*> out;
        for (const ManifestItem& item : items)
            if (item.split == split && item.domain == domain) out.push_back(&item);
        return out;
    }
};

namespace synth {

inline constexpr const char* kClassNames[5] = {"background", "circle", "square", "triangle",
                                               "stripe"};

inline std::vector<std::array<std::uint8_t, 3>> label_palette() {
    return {{{30, 30, 30}}, {{220, 50, 50}}, {{50, 200, 70}}, {{60, 200, 220}}, {{160, 60, 200}}};
}

struct Rgb {
    double r, g, b;
};

// Two appearance modes per class.
inline Rgb class_color(int cls_id, int mode) {
    static const Rgb table[5][2] = {
        {{0.34, 0.38, 0.46}, {0.46, 0.42, 0.30}},  // background
        {{0.85, 0.18, 0.18}, {0.18, 0.30, 0.85}},  // circle
        {{0.16, 0.68, 0.24}, {0.84, 0.78, 0.18}},  // square
        {{0.10, 0.80, 0.80}, {0.92, 0.92, 0.92}},  // triangle
        {{0.55, 0.18, 0.65}, {0.90, 0.55, 0.14}},  // stripe
    };
    return table[cls_id][mode & 1];
}

// Rotation of the RGB cube around the gray axis; angle in turns.
inline void hue_rotate(double& r, double& g, double& b, double turns) {
    const double a = turns * 2.0 * 3.14159265358979323846;
    const double cosA = std::cos(a), sinA = std::sin(a);
    const double m00 = cosA + (1.0 - cosA) / 3.0;
    const double m01 = (1.0 - cosA) / 3.0 - std::sqrt(1.0 / 3.0) * sinA;
    const double m02 = (1.0 - cosA) / 3.0 + std::sqrt(1.0 / 3.0) * sinA;
    const double nr = m00 * r + m01 * g + m02 * b;
    const double ng = m02 * r + m00 * g + m01 * b;
    const double nb = m01 * r + m02 * g + m00 * b;
    r = nr;
    g = ng;
    b = nb;
}

struct Sample {
    Tensor pixels;  // h x w x 3 in [0,1]
    LabelMap labels;
};

// Deterministic per-index geometry and appearance; the shift is applied to
// target appearance afterwards. The presence schedule for stripe / triangle /
// second square is index-based so both domains realize the same class
// frequencies and every class shows up regularly in every split.
inline Sample render_sample(const SyntheticSpec& spec, Domain domain, Split split, int index) {
    const int h = spec.height, w = spec.width;
    Sample s;
    s.pixels = Tensor(h, w, 3);
    s.labels = LabelMap(h, w, 0);

    std::mt19937_64 rng(mix_seed(static_cast<std::uint64_t>(spec.seed),
                                 domain == Domain::source ? 11 : 23,
                                 split == Split::train ? 31 : 47, static_cast<std::uint64_t>(index)));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto uniform_int = [&rng](int lo, int hi) {
        return std::uniform_int_distribution<int>(lo, hi)(rng);
    };

    const double area_scale = std::sqrt(static_cast<double>(h) * w / 4096.0);
    const double freq_circle = spec.class_frequency.size() > 1 ? spec.class_frequency[1] : 0.11;
    const double freq_tri = spec.class_frequency.size() > 3 ? spec.class_frequency[3] : 0.008;
    const double circle_scale = std::sqrt(std::max(0.2, freq_circle / 0.11));
    const double tri_scale = std::sqrt(std::max(0.2, std::min(2.5, freq_tri / 0.008)));

    // background
    const int bg_mode = uniform_int(0, 1);
    Rgb bg = class_color(0, bg_mode);
    const double bg_jit = (unit(rng) - 0.5) * 0.06;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double grad = bg_mode == 1 ? 0.10 * (static_cast<double>(y) / h - 0.5) : 0.0;
            double* p = s.pixels.px(y, x);
            p[0] = bg.r + bg_jit + grad;
            p[1] = bg.g + bg_jit + grad;
            p[2] = bg.b + bg_jit + grad;
        }
    }

    auto paint = [&](int y, int x, int cls_id, const Rgb& c) {
        double* p = s.pixels.px(y, x);
        p[0] = c.r;
        p[1] = c.g;
        p[2] = c.b;
        s.labels.at(y, x) = cls_id;
    };
    auto jittered = [&](int cls_id, int mode) {
        Rgb c = class_color(cls_id, mode);
        const double j = (unit(rng) - 0.5) * 0.08;
        c.r += j;
        c.g += j;
        c.b += j;
        return c;
    };

    // stripe (present for 3 of every 5 indices)
    if (index % 5 < 3) {
        const int mode = uniform_int(0, 1);
        const Rgb c = jittered(4, mode);
        const int band = std::max(4, static_cast<int>((8 + uniform_int(0, 4)) * area_scale));
        const int y0 = uniform_int(0, h - band - 1);
        const bool diagonal = uniform_int(0, 1) == 1;
        const int slope = diagonal ? (uniform_int(0, 1) == 0 ? 1 : -1) : 0;
        for (int x = 0; x < w; ++x) {
            const int off = slope * x / 3;
            for (int dy = 0; dy < band; ++dy) {
                const int y = y0 + dy + off;
                if (y >= 0 && y < h) paint(y, x, 4, c);
            }
        }
    }

    // squares (one always, a second on odd indices)
    const int n_squares = 1 + (index % 2);
    for (int i = 0; i < n_squares; ++i) {
        const int mode = uniform_int(0, 1);
        const Rgb c = jittered(2, mode);
        const int side = std::max(5, static_cast<int>(uniform_int(10, 15) * area_scale));
        const int y0 = uniform_int(0, h - side - 1);
        const int x0 = uniform_int(0, w - side - 1);
        for (int y = y0; y < y0 + side; ++y)
            for (int x = x0; x < x0 + side; ++x) paint(y, x, 2, c);
    }

    // two circles
    for (int i = 0; i < 2; ++i) {
        const int mode = uniform_int(0, 1);
        const Rgb c = jittered(1, mode);
        const int radius = std::max(4, static_cast<int>(uniform_int(7, 10) * area_scale * circle_scale));
        const int cy = uniform_int(radius, h - radius - 1);
        const int cx = uniform_int(radius, w - radius - 1);
        for (int y = cy - radius; y <= cy + radius; ++y)
            for (int x = cx - radius; x <= cx + radius; ++x) {
                const double dy = y - cy, dx = x - cx;
                if (dy * dy + dx * dx <= static_cast<double>(radius) * radius) paint(y, x, 1, c);
            }
    }

    // triangle: the rare class, drawn last so it is never occluded
    if (index % 2 == 0) {
        const int mode = uniform_int(0, 1);
        const Rgb c = jittered(3, mode);
        const int side = std::max(6, static_cast<int>(uniform_int(9, 13) * area_scale * tri_scale));
        const int apex_y = uniform_int(1, h - side - 2);
        const int apex_x = uniform_int(side / 2 + 1, w - side / 2 - 2);
        for (int dy = 0; dy < side; ++dy) {
            const int half = dy / 2;
            for (int dx = -half; dx <= half; ++dx) {
                const int y = apex_y + dy, x = apex_x + dx;
                if (y >= 0 && y < h && x >= 0 && x < w) paint(y, x, 3, c);
            }
        }
    }

    // shared within-domain brightness jitter
    const double glob = (unit(rng) - 0.5) * 0.06;
    for (double& v : s.pixels.v) v += glob;

    if (domain == Domain::target) {
        const ShiftSpec& sh = spec.shift;
        std::mt19937_64 noise_rng(mix_seed(static_cast<std::uint64_t>(spec.seed), 57,
                                           split == Split::train ? 31 : 47,
                                           static_cast<std::uint64_t>(index)));
        std::normal_distribution<double> noise(0.0, sh.noise_sigma > 0 ? sh.noise_sigma : 1.0);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                double* p = s.pixels.px(y, x);
                hue_rotate(p[0], p[1], p[2], sh.hue_delta);
                double tex = 1.0;
                if (sh.texture_mode == 1)
                    tex = 1.0 + 0.12 * std::sin(2.0 * 3.14159265358979323846 * (x + y) / 9.0);
                for (int ch = 0; ch < 3; ++ch) {
                    double v = p[ch] * tex + sh.brightness_delta;
                    if (sh.noise_sigma > 0) v += noise(noise_rng);
                    p[ch] = v;
                }
            }
        }
    }
    for (double& v : s.pixels.v) v = std::clamp(v, 0.0, 1.0);
    return s;
}

}  // namespace synth

inline RgbImage to_rgb8(const Tensor& pixels) {
    RgbImage img(pixels.h, pixels.w);
    for (std::size_t i = 0; i < static_cast<std::size_t>(pixels.h) * pixels.w; ++i)
        for (int ch = 0; ch < 3; ++ch)
            img.rgb[i * 3 + ch] = static_cast<std::uint8_t>(
                std::lround(std::clamp(pixels.v[i * 3 + ch], 0.0, 1.0) * 255.0));
    return img;
}

inline IndexedImage to_indexed(const LabelMap& labels,
                               const std::vector<std::array<std::uint8_t, 3>>& palette) {
    IndexedImage img(labels.h, labels.w);
    int max_idx = 0;
    for (std::size_t i = 0; i < labels.labels.size(); ++i) {
        img.idx[i] = static_cast<std::uint8_t>(labels.labels[i]);
        max_idx = std::max(max_idx, labels.labels[i]);
    }
    img.palette = palette;
    while (static_cast<int>(img.palette.size()) <= max_idx) img.palette.push_back({0, 0, 0});
    return img;
}

namespace detail {

inline std::string item_name(int index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%05d.png", index);
    return buf;
}

inline void write_manifest(const DatasetManifest& m) {
    nlohmann::ordered_json j;
    j["format"] = "groupalign-dataset";
    j["version"] = 1;
    j["cls"] = m.cls;
    j["ignore"] = m.ignore;
    j["height"] = m.height;
    j["width"] = m.width;
    j["class_names"] = m.class_names;
    nlohmann::ordered_json palette = nlohmann::ordered_json::array();
    for (const auto& c : m.palette) palette.push_back({c[0], c[1], c[2]});
    j["palette"] = palette;
    nlohmann::ordered_json items = nlohmann::ordered_json::array();
    for (const ManifestItem& item : m.items) {
        nlohmann::ordered_json e;
        e["split"] = split_name(item.split);
        e["domain"] = domain_name(item.domain);
        e["image"] = item.image_path;
        if (item.label_path) e["label"] = *item.label_path;
        else e["label"] = nullptr;
        items.push_back(e);
    }
    j["items"] = items;
    std::ofstream out(fs::path(m.root) / "manifest.json");
    if (!out) throw DataError("cannot write manifest under " + m.root);
    out << j.dump(2) << "\n";
}

}  // namespace detail

// Writes the synthetic dataset to disk and returns its manifest. Fixed seed
// gives byte-identical output.
inline DatasetManifest generate_synthetic(const SyntheticSpec& spec, const std::string& out_root) {
    spec.validate();
    DatasetManifest m;
    m.root = out_root;
    m.cls = spec.cls;
    m.height = spec.height;
    m.width = spec.width;
    for (const char* n : synth::kClassNames) m.class_names.push_back(n);
    m.palette = synth::label_palette();

    std::error_code ec;
    for (const char* domain : {"source", "target"}) {
        fs::create_directories(fs::path(out_root) / domain / "images", ec);
        if (ec) throw DataError("cannot create output directory under " + out_root);
        fs::create_directories(fs::path(out_root) / domain / "labels", ec);
        if (ec) throw DataError("cannot create output directory under " + out_root);
    }

    auto emit = [&](Domain domain, Split split, int index, int file_index) {
        synth::Sample s = synth::render_sample(spec, domain, split, index);
        const std::string base = domain == Domain::source ? "source" : "target";
        const std::string img_rel = base + "/images/" + detail::item_name(file_index);
        const std::string lab_rel = base + "/labels/" + detail::item_name(file_index);
        write_png((fs::path(out_root) / img_rel).string(), to_rgb8(s.pixels));
        write_png((fs::path(out_root) / lab_rel).string(), to_indexed(s.labels, m.palette));
        ManifestItem item;
        item.split = split;
        item.domain = domain;
        item.image_path = img_rel;
        // target train labels exist on disk for diagnostics but are
        // quarantined: the manifest lists them as absent
        if (domain == Domain::target && split == Split::train) item.label_path = std::nullopt;
        else item.label_path = lab_rel;
        m.items.push_back(item);
    };

    for (int i = 0; i < spec.n_source; ++i) emit(Domain::source, Split::train, i, i);
    for (int i = 0; i < spec.n_target; ++i) emit(Domain::target, Split::train, i, i);
    for (int i = 0; i < spec.n_val; ++i)
        emit(Domain::source, Split::val, i, spec.n_source + i);
    for (int i = 0; i < spec.n_val; ++i)
        emit(Domain::target, Split::val, i, spec.n_target + i);

    detail::write_manifest(m);
    return m;
}

struct IngestOptions {
    int cls = 5;
    int ignore = kIgnoreLabel;
    std::optional<std::pair<int, int>> resize_to;  // (height, width)
};

namespace detail {

inline DatasetManifest manifest_from_json(const std::string& root) {
    std::ifstream in(fs::path(root) / "manifest.json");
    nlohmann::json j;
    in >> j;
    DatasetManifest m;
    m.root = root;
    m.cls = j.at("cls").get<int>();
    m.ignore = j.value("ignore", kIgnoreLabel);
    m.height = j.value("height", 0);
    m.width = j.value("width", 0);
    if (j.contains("class_names"))
        m.class_names = j["class_names"].get<std::vector<std::string>>();
    if (j.contains("palette"))
        for (const auto& c : j["palette"])
            m.palette.push_back({c[0].get<std::uint8_t>(), c[1].get<std::uint8_t>(),
                                 c[2].get<std::uint8_t>()});
    for (const auto& e : j.at("items")) {
        ManifestItem item;
        const std::string split = e.at("split").get<std::string>();
        if (split == "train") item.split = Split::train;
        else if (split == "val") item.split = Split::val;
        else throw DataError("manifest: unknown split '" + split + "'");
        const std::string domain = e.at("domain").get<std::string>();
        if (domain == "source") item.domain = Domain::source;
        else if (domain == "target") item.domain = Domain::target;
        else throw DataError("manifest: unknown domain '" + domain + "'");
        item.image_path = e.at("image").get<std::string>();
        if (e.contains("label") && !e["label"].is_null())
            item.label_path = e["label"].get<std::string>();
        m.items.push_back(item);
    }
    return m;
}

inline DatasetManifest manifest_from_scan(const std::string& root, const IngestOptions& opt) {
    DatasetManifest m;
    m.root = root;
    m.cls = opt.cls;
    m.ignore = opt.ignore;
    bool found_any = false;
    for (Domain domain : {Domain::source, Domain::target}) {
        const fs::path base = fs::path(root) / domain_name(domain);
        const fs::path images = fs::exists(base / "images") ? base / "images"
                                : fs::exists(base)          ? base
                                                            : fs::path();
        if (images.empty() || !fs::exists(images)) continue;
        const fs::path labels = images.filename() == "images" ? base / "labels" : fs::path();
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(images))
            if (entry.is_regular_file() && entry.path().extension() == ".png")
                files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        for (const fs::path& f : files) {
            found_any = true;
            ManifestItem item;
            item.domain = domain;
            item.split = Split::train;
            item.image_path = fs::relative(f, root).string();
            if (!labels.empty()) {
                const fs::path lab = labels / f.filename();
                if (fs::exists(lab)) item.label_path = fs::relative(lab, root).string();
                else if (domain == Domain::source)
                    throw DataError("missing label for image: " + f.string());
            }
            m.items.push_back(item);
        }
    }
    // flat layout: root/images + root/labels, treated as source data
    if (!found_any) {
        const fs::path images = fs::path(root) / "images";
        const fs::path labels = fs::path(root) / "labels";
        if (!fs::exists(images)) throw DataError("no dataset found under " + root);
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(images))
            if (entry.is_regular_file() && entry.path().extension() == ".png")
                files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        for (const fs::path& f : files) {
            ManifestItem item;
            item.domain = Domain::source;
            item.split = Split::train;
            item.image_path = fs::relative(f, root).string();
            const fs::path lab = labels / f.filename();
            if (fs::exists(lab)) item.label_path = fs::relative(lab, root).string();
            m.items.push_back(item);
        }
        if (m.items.empty()) throw DataError("no images found under " + images.string());
    }
    return m;
}

}  // namespace detail

// Loads a dataset either through its manifest.json or by scanning the
// documented folder layout.
inline DatasetManifest ingest_folder(const std::string& root, const IngestOptions& opt = {}) {
    if (!fs::exists(root)) throw DataError("dataset root does not exist: " + root);
    DatasetManifest m;
    if (fs::exists(fs::path(root) / "manifest.json")) m = detail::manifest_from_json(root);
    else m = detail::manifest_from_scan(root, opt);
    if (opt.resize_to) {
        m.height = opt.resize_to->first;
        m.width = opt.resize_to->second;
    }
    return m;
}

// --- item loading -----------------------------------------------------------

inline Image load_image(const DatasetManifest& m, const ManifestItem& item,
                        std::optional<std::pair<int, int>> resize_to = {}) {
    const std::string path = (fs::path(m.root) / item.image_path).string();
    RgbImage raw = read_png_rgb(path);
    Tensor t(raw.h, raw.w, 3);
    for (std::size_t i = 0; i < raw.rgb.size(); ++i) t.v[i] = raw.rgb[i] / 255.0;
    if (resize_to && (resize_to->first != raw.h || resize_to->second != raw.w))
        t = bilinear_resize(t, resize_to->first, resize_to->second);
    Image img;
    img.pixels = std::move(t);
    img.domain_tag = item.domain;
    return img;
}

inline LabelMap load_label(const DatasetManifest& m, const ManifestItem& item,
                           std::optional<std::pair<int, int>> resize_to = {}) {
    if (!item.label_path) throw DataError("item has no label: " + item.image_path);
    const std::string path = (fs::path(m.root) / *item.label_path).string();
    IndexedImage raw = read_png_indexed(path);
    LabelMap lm(raw.h, raw.w);
    for (std::size_t i = 0; i < raw.idx.size(); ++i) {
        const int value = raw.idx[i];
        if (value != m.ignore && value >= m.cls)
            throw DataError("label value " + std::to_string(value) + " >= cls in " + path);
        lm.labels[i] = value == m.ignore ? kIgnoreLabel : value;
    }
    if (resize_to && (resize_to->first != raw.h || resize_to->second != raw.w)) {
        // nearest-neighbour resize keeps labels categorical
        LabelMap out(resize_to->first, resize_to->second);
        for (int y = 0; y < out.h; ++y)
            for (int x = 0; x < out.w; ++x) {
                const int sy = std::min(raw.h - 1, static_cast<int>((y + 0.5) * raw.h / out.h));
                const int sx = std::min(raw.w - 1, static_cast<int>((x + 0.5) * raw.w / out.w));
                out.at(y, x) = lm.at(sy, sx);
            }
        return out;
    }
    return lm;
}

// Validates that a paired image and label agree spatially.
inline void check_pair_shapes(const Image& img, const LabelMap& lm, const std::string& name) {
    if (img.pixels.h != lm.h || img.pixels.w != lm.w)
        throw DataError("image/label dimension mismatch for " + name);
}

}  // namespace groupalign
