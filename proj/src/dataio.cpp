#include "mapl/dataio.hpp"

#include "mapl/error.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>

namespace mapl::dataio {
namespace {

bool has_image_extension(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".tif" || ext == ".tiff";
}

std::vector<fs::path> list_images(const fs::path& dir) {
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && has_image_extension(e.path())) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<fs::path> list_subdirs(const fs::path& dir) {
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory()) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

void require_dir(const fs::path& p) {
    if (!fs::is_directory(p)) throw DatasetLayoutError("missing directory " + p.string());
}

void require_decodable(const fs::path& p) {
    if (!cv::haveImageReader(p.string())) throw FileError("cannot decode image " + p.string());
}

cv::Mat read_raw(const fs::path& path) {
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (m.empty()) throw FileError("cannot decode image " + path.string());
    return m;
}

// Any depth / channel count to single- or three-channel float in [0, 1].
cv::Mat to_unit_float(const cv::Mat& raw, bool gray) {
    double scale = 1.0;
    switch (raw.depth()) {
        case CV_8U: scale = 1.0 / 255.0; break;
        case CV_16U: scale = 1.0 / 65535.0; break;
        case CV_32F:
        case CV_64F: scale = 1.0; break;
        default: throw FileError("unsupported image depth");
    }
    cv::Mat f;
    raw.convertTo(f, CV_32F, scale);
    cv::Mat out;
    const int ch = f.channels();
    if (gray) {
        if (ch == 1) out = f;
        else if (ch == 3) cv::cvtColor(f, out, cv::COLOR_BGR2GRAY);
        else cv::cvtColor(f, out, cv::COLOR_BGRA2GRAY);
    } else {
        if (ch == 1) cv::cvtColor(f, out, cv::COLOR_GRAY2RGB);
        else if (ch == 3) cv::cvtColor(f, out, cv::COLOR_BGR2RGB);
        else cv::cvtColor(f, out, cv::COLOR_BGRA2RGB);
    }
    return out;
}

Image from_mat(const cv::Mat& rgb) {
    Image img(rgb.rows, rgb.cols);
    for (int y = 0; y < rgb.rows; ++y) {
        const float* row = rgb.ptr<float>(y);
        for (int i = 0; i < rgb.cols * 3; ++i)
            img.pixels[static_cast<std::size_t>(y) * rgb.cols * 3 + i] = std::clamp(row[i], 0.0f, 1.0f);
    }
    return img;
}

cv::Mat to_mat(const Image& img) {
    cv::Mat m(img.height, img.width, CV_32FC3);
    for (int y = 0; y < img.height; ++y)
        std::copy_n(img.pixels.data() + static_cast<std::size_t>(y) * img.width * 3, img.width * 3, m.ptr<float>(y));
    return m;
}

void write_png(const cv::Mat& m, const fs::path& path) {
    if (path.has_parent_path() && !fs::exists(path.parent_path())) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
    }
    bool ok = false;
    try {
        ok = cv::imwrite(path.string(), m);
    } catch (const cv::Exception&) {
        ok = false;
    }
    if (!ok) throw FileError("cannot write " + path.string());
}

}  // namespace

std::size_t DatasetIndex::count(Label l) const {
    return static_cast<std::size_t>(
        std::count_if(test_items.begin(), test_items.end(), [l](const TestItem& t) { return t.label == l; }));
}

DatasetIndex load_dataset(const fs::path& root, const std::string& category) {
    const fs::path base = root / category;
    require_dir(base);
    const fs::path train_good = base / "train" / "good";
    require_dir(train_good);
    const fs::path test_dir = base / "test";
    require_dir(test_dir);

    DatasetIndex index;
    index.category = category;
    index.train_normals = list_images(train_good);
    if (index.train_normals.empty()) throw DatasetLayoutError("no training images in " + train_good.string());
    for (const auto& p : index.train_normals) require_decodable(p);

    for (const auto& sub : list_subdirs(test_dir)) {
        const std::string type = sub.filename().string();
        const bool normal = type == "good";
        for (const auto& p : list_images(sub)) {
            require_decodable(p);
            TestItem item;
            item.image = p;
            item.defect_type = type;
            item.label = normal ? Label::normal : Label::anomalous;
            if (!normal) {
                const fs::path mask = base / "ground_truth" / type / (p.stem().string() + "_mask.png");
                if (fs::is_regular_file(mask)) item.mask = mask;
            }
            index.test_items.push_back(std::move(item));
        }
    }
    return index;
}

Image load_image(const fs::path& path, int target_size) {
    if (target_size <= 0) throw ParameterError("target size must be positive");
    cv::Mat rgb = to_unit_float(read_raw(path), false);
    if (rgb.rows != target_size || rgb.cols != target_size) {
        cv::Mat resized;
        cv::resize(rgb, resized, cv::Size(target_size, target_size), 0, 0, cv::INTER_LINEAR);
        rgb = resized;
    }
    return from_mat(rgb);
}

GrayMask load_mask(const fs::path& path, int target_size) {
    cv::Mat raw = read_raw(path);
    cv::Mat gray;
    if (raw.channels() == 1) gray = raw;
    else cv::cvtColor(raw, gray, raw.channels() == 3 ? cv::COLOR_BGR2GRAY : cv::COLOR_BGRA2GRAY);
    if (gray.rows != target_size || gray.cols != target_size) {
        cv::Mat resized;
        cv::resize(gray, resized, cv::Size(target_size, target_size), 0, 0, cv::INTER_NEAREST);
        gray = resized;
    }
    cv::Mat f;
    gray.convertTo(f, CV_64F);
    GrayMask mask(target_size, target_size);
    for (int y = 0; y < target_size; ++y)
        for (int x = 0; x < target_size; ++x) mask.at(y, x) = f.at<double>(y, x) > 0.0 ? 1 : 0;
    return mask;
}

std::vector<Image> load_image_dir(const fs::path& dir, int target_size) {
    if (!fs::is_directory(dir)) throw FileError("texture directory not found: " + dir.string());
    std::vector<Image> out;
    for (const auto& p : list_images(dir)) out.push_back(load_image(p, target_size));
    return out;
}

Image perturb_bhad(const Image& img, double sigma, double contrast, Rng& rng) {
    Image out = img;
    for (float& v : out.pixels) {
        double t = contrast * (static_cast<double>(v) - 0.5) + 0.5;
        if (sigma > 0.0) t += sigma * rng.normal();
        v = static_cast<float>(std::clamp(t, 0.0, 1.0));
    }
    return out;
}

Image perturb_random(const Image& img, const PerturbRange& range, Rng& rng) {
    const double sigma = rng.uniform(0.0, range.sigma_max);
    const double contrast = rng.uniform(range.contrast_lo, range.contrast_hi);
    return perturb_bhad(img, sigma, contrast, rng);
}

void export_heatmap(const ScoreMap& map, const fs::path& path) {
    cv::Mat m(map.height, map.width, CV_16UC1);
    for (int y = 0; y < map.height; ++y)
        for (int x = 0; x < map.width; ++x)
            m.at<std::uint16_t>(y, x) =
                static_cast<std::uint16_t>(std::lround(std::clamp(map.at(y, x), 0.0, 1.0) * 65535.0));
    write_png(m, path);
}

ScoreMap read_heatmap(const fs::path& path) {
    cv::Mat f = to_unit_float(read_raw(path), true);
    ScoreMap map(f.rows, f.cols);
    for (int y = 0; y < f.rows; ++y)
        for (int x = 0; x < f.cols; ++x) map.at(y, x) = f.at<float>(y, x);
    return map;
}

void save_image(const Image& img, const fs::path& path) {
    cv::Mat rgb = to_mat(img), bgr, u8;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    bgr.convertTo(u8, CV_8U, 255.0);
    write_png(u8, path);
}

void save_mask(const GrayMask& mask, const fs::path& path) {
    cv::Mat m(mask.height, mask.width, CV_8UC1);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) m.at<std::uint8_t>(y, x) = mask.at(y, x) ? 255 : 0;
    write_png(m, path);
}

Image resize_bilinear(const Image& img, int height, int width) {
    if (img.height == height && img.width == width) return img;
    cv::Mat out;
    cv::resize(to_mat(img), out, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
    return from_mat(out);
}

}  // namespace mapl::dataio
