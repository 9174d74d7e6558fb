#include "bagnet/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "bagnet/error.hpp"

namespace bagnet {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t tab = line.find('\t', start);
        out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
        if (tab == std::string::npos) {
            return out;
        }
        start = tab + 1;
    }
}

bool parse_int(const std::string& s, long long& out) {
    if (s.empty()) {
        return false;
    }
    std::size_t used = 0;
    try {
        out = std::stoll(s, &used);
    } catch (const std::exception&) {
        return false;
    }
    return used == s.size();
}

std::string line_error(int line, const std::string& what) {
    return "manifest line " + std::to_string(line) + ": " + what;
}

void check_target(int h, int w) {
    if (h < 16 || w < 16 || h % 16 != 0 || w % 16 != 0) {
        throw ConfigError("target size " + std::to_string(h) + "x" + std::to_string(w) +
                          " must be positive multiples of 16");
    }
}

cv::Mat read_gray_u8(const fs::path& path, const std::string& what) {
    if (!fs::exists(path)) {
        throw MissingFileError(what + ": file not found: " + path.string());
    }
    cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (raw.empty()) {
        throw DecodeError(what + ": cannot decode " + path.string());
    }
    if (raw.depth() != CV_8U) {
        throw DecodeError(what + ": " + path.string() + " is not an 8-bit image");
    }
    if (raw.channels() == 1) {
        return raw;
    }
    if (raw.channels() != 3 && raw.channels() != 4) {
        throw DecodeError(what + ": " + path.string() + " has " + std::to_string(raw.channels()) + " channels");
    }
    // Average of the colour channels, rounded.
    cv::Mat gray(raw.rows, raw.cols, CV_8U);
    const int ch = raw.channels();
    for (int y = 0; y < raw.rows; ++y) {
        const std::uint8_t* src = raw.ptr<std::uint8_t>(y);
        std::uint8_t* dst = gray.ptr<std::uint8_t>(y);
        for (int x = 0; x < raw.cols; ++x) {
            const int sum = src[x * ch] + src[x * ch + 1] + src[x * ch + 2];
            dst[x] = static_cast<std::uint8_t>((sum + 1) / 3);
        }
    }
    return gray;
}

Tensor<float> to_tensor(const cv::Mat& m) {
    Tensor<float> t(Shape{1, 1, m.rows, m.cols});
    for (int y = 0; y < m.rows; ++y) {
        const float* row = m.ptr<float>(y);
        std::copy(row, row + m.cols, t.ptr() + static_cast<std::size_t>(y) * m.cols);
    }
    return t;
}

cv::Mat to_mat(const Tensor<float>& t) {
    const Shape& s = t.shape();
    if (s.n != 1 || s.c != 1) {
        throw ShapeError("expected a (1,1,h,w) image tensor, got " + s.str());
    }
    cv::Mat m(s.h, s.w, CV_32F);
    for (int y = 0; y < s.h; ++y) {
        std::copy(t.ptr() + static_cast<std::size_t>(y) * s.w, t.ptr() + static_cast<std::size_t>(y + 1) * s.w,
                  m.ptr<float>(y));
    }
    return m;
}

cv::Mat to_u8(const Tensor<float>& t) {
    cv::Mat f = to_mat(t);
    cv::Mat u(f.rows, f.cols, CV_8U);
    for (int y = 0; y < f.rows; ++y) {
        for (int x = 0; x < f.cols; ++x) {
            const float v = std::clamp(f.at<float>(y, x), 0.0f, 1.0f);
            u.at<std::uint8_t>(y, x) = static_cast<std::uint8_t>(std::lround(v * 255.0f));
        }
    }
    return u;
}

void ensure_parent(const fs::path& path) {
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
        if (ec) {
            throw DataError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
        }
    }
}

void write_u8(const fs::path& path, const cv::Mat& m) {
    ensure_parent(path);
    std::vector<int> params;
    if (path.extension() == ".png") {
        params = {cv::IMWRITE_PNG_COMPRESSION, 6};
    }
    bool ok = false;
    try {
        ok = cv::imwrite(path.string(), m, params);
    } catch (const cv::Exception& e) {
        throw DataError("cannot write " + path.string() + ": " + e.what());
    }
    if (!ok) {
        throw DataError("cannot write " + path.string());
    }
}

struct Ellipse {
    double cx, cy, a, b, angle;

    bool contains(double x, double y) const {
        const double dx = x - cx;
        const double dy = y - cy;
        const double c = std::cos(angle);
        const double s = std::sin(angle);
        const double u = (c * dx + s * dy) / a;
        const double v = (-s * dx + c * dy) / b;
        return u * u + v * v <= 1.0;
    }
};

}  // namespace

fs::path DatasetManifest::resolve(const fs::path& p) const {
    return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
}

DatasetManifest parse_manifest_text(const std::string& text, const fs::path& base_dir,
                                    std::vector<std::string>* warnings) {
    DatasetManifest m;
    m.base_dir = base_dir;
    std::set<std::string> ids;
    std::istringstream in(text);
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        if (line.rfind("#!", 0) == 0) {
            std::istringstream d(line.substr(2));
            std::string key;
            d >> key;
            std::vector<std::string> args;
            for (std::string a; d >> a;) {
                args.push_back(a);
            }
            long long v1 = 0;
            long long v2 = 0;
            if (key == "target_size") {
                if (args.size() != 2 || !parse_int(args[0], v1) || !parse_int(args[1], v2)) {
                    throw ManifestError(line_error(number, "expected '#! target_size <h> <w>'"));
                }
                try {
                    check_target(static_cast<int>(v1), static_cast<int>(v2));
                } catch (const ConfigError& e) {
                    throw ManifestError(line_error(number, e.what()));
                }
                m.target_height = static_cast<int>(v1);
                m.target_width = static_cast<int>(v2);
            } else if (key == "seed") {
                if (args.size() != 1 || !parse_int(args[0], v1) || v1 < 0) {
                    throw ManifestError(line_error(number, "expected '#! seed <non-negative integer>'"));
                }
                m.seed = static_cast<std::uint64_t>(v1);
            } else {
                throw ManifestError(line_error(number, "unknown directive '" + key + "'"));
            }
            continue;
        }
        if (line[0] == '#') {
            continue;
        }
        const auto fields = split_tabs(line);
        if (fields.size() != 3 && fields.size() != 4) {
            throw ManifestError(line_error(number, "expected 3 or 4 tab-separated fields, got " +
                                                       std::to_string(fields.size())));
        }
        Sample s;
        s.id = fields[0];
        s.image_path = fields[1];
        s.mask_path = fields[2];
        if (s.id.empty() || fields[1].empty() || fields[2].empty()) {
            throw ManifestError(line_error(number, "empty field"));
        }
        if (fields.size() == 4) {
            long long f = 0;
            if (!parse_int(fields[3], f) || f < 0) {
                throw ManifestError(line_error(number, "fold must be a non-negative integer, got '" + fields[3] + "'"));
            }
            s.fold = static_cast<int>(f);
        }
        if (!ids.insert(s.id).second) {
            throw ManifestError(line_error(number, "duplicate sample id '" + s.id + "'"));
        }
        if (warnings) {
            for (const fs::path& p : {s.image_path, s.mask_path}) {
                if (!fs::exists(m.resolve(p))) {
                    warnings->push_back(line_error(number, "sample '" + s.id + "' references missing file " +
                                                               m.resolve(p).string()));
                }
            }
        }
        m.samples.push_back(std::move(s));
    }
    return m;
}

DatasetManifest parse_manifest(const fs::path& path, std::vector<std::string>* warnings) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw MissingFileError("cannot open manifest " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_manifest_text(buf.str(), path.parent_path(), warnings);
}

std::string format_manifest(const DatasetManifest& m) {
    std::ostringstream out;
    out << "# id\timage\tmask\t[fold]\n";
    out << "#! target_size " << m.target_height << ' ' << m.target_width << '\n';
    out << "#! seed " << m.seed << '\n';
    for (const Sample& s : m.samples) {
        out << s.id << '\t' << s.image_path.generic_string() << '\t' << s.mask_path.generic_string();
        if (s.fold) {
            out << '\t' << *s.fold;
        }
        out << '\n';
    }
    return out.str();
}

void write_manifest(const DatasetManifest& m, const fs::path& path) {
    ensure_parent(path);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot write manifest " + path.string());
    }
    out << format_manifest(m);
}

Tensor<float> load_image(const fs::path& path) {
    cv::Mat u8 = read_gray_u8(path, "image");
    cv::Mat f;
    u8.convertTo(f, CV_32F, 1.0 / 255.0);
    return to_tensor(f);
}

Tensor<float> resize_image(const Tensor<float>& image, int height, int width) {
    const Shape& s = image.shape();
    if (s.h == height && s.w == width) {
        return image;
    }
    cv::Mat out;
    cv::resize(to_mat(image), out, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
    return to_tensor(out);
}

LoadedSample load_sample(const Sample& sample, int target_height, int target_width, const fs::path& base_dir) {
    check_target(target_height, target_width);
    auto resolve = [&](const fs::path& p) { return p.is_absolute() || base_dir.empty() ? p : base_dir / p; };
    const std::string tag = "sample '" + sample.id + "'";
    cv::Mat image = read_gray_u8(resolve(sample.image_path), tag + " image");
    cv::Mat mask = read_gray_u8(resolve(sample.mask_path), tag + " mask");
    if (image.size() != mask.size()) {
        throw SizeMismatchError(tag + ": image is " + std::to_string(image.cols) + "x" + std::to_string(image.rows) +
                                ", mask is " + std::to_string(mask.cols) + "x" + std::to_string(mask.rows));
    }

    cv::Mat imf;
    image.convertTo(imf, CV_32F, 1.0 / 255.0);
    LoadedSample out;
    out.image = resize_image(to_tensor(imf), target_height, target_width);

    cv::Mat mr = mask;
    if (mask.rows != target_height || mask.cols != target_width) {
        cv::resize(mask, mr, cv::Size(target_width, target_height), 0, 0, cv::INTER_NEAREST);
    }
    Tensor<float> m(Shape{1, 1, target_height, target_width});
    for (int y = 0; y < target_height; ++y) {
        for (int x = 0; x < target_width; ++x) {
            m.at(0, 0, y, x) = mr.at<std::uint8_t>(y, x) != 0 ? 1.0f : 0.0f;
        }
    }
    out.mask = std::move(m);
    return out;
}

DatasetManifest synth_dataset(int n, int height, int width, std::uint64_t seed, const fs::path& out_dir) {
    if (n < 1) {
        throw ConfigError("synth_dataset needs n >= 1");
    }
    check_target(height, width);
    std::error_code ec;
    fs::create_directories(out_dir / "images", ec);
    if (!ec) {
        fs::create_directories(out_dir / "masks", ec);
    }
    if (ec) {
        throw DataError("cannot create output directory " + out_dir.string() + ": " + ec.message());
    }

    DatasetManifest manifest;
    manifest.target_height = height;
    manifest.target_width = width;
    manifest.seed = seed;
    manifest.base_dir = out_dir;
    const double pixels = static_cast<double>(height) * width;

    for (int i = 0; i < n; ++i) {
        std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(i) + 1);
        std::uniform_real_distribution<double> unit(0.0, 1.0);

        std::vector<std::uint8_t> fg(static_cast<std::size_t>(height) * width);
        for (int attempt = 0;; ++attempt) {
            if (attempt == 1000) {
                throw DataError("synth_dataset could not place an ellipse in " + std::to_string(height) + "x" +
                                std::to_string(width));
            }
            const double area = pixels * (0.08 + 0.27 * unit(rng));
            const double aspect = 0.5 + 0.5 * unit(rng);
            Ellipse e{};
            e.a = std::sqrt(area / (std::numbers::pi * aspect));
            e.b = aspect * e.a;
            e.angle = std::numbers::pi * unit(rng);
            const double margin = std::min(e.a, 0.5 * std::min(height, width) - 1.0);
            e.cx = margin + (width - 2.0 * margin) * unit(rng);
            e.cy = margin + (height - 2.0 * margin) * unit(rng);
            std::size_t count = 0;
            for (int y = 0; y < height; ++y) {
                for (int x = 0; x < width; ++x) {
                    const bool in = e.contains(x + 0.5, y + 0.5);
                    fg[static_cast<std::size_t>(y) * width + x] = in ? 1 : 0;
                    count += in;
                }
            }
            const double frac = static_cast<double>(count) / pixels;
            if (frac >= 0.05 && frac <= 0.40) {
                break;
            }
        }

        const double background = 0.55 + 0.2 * unit(rng);
        const double lesion = background - (0.2 + 0.15 * unit(rng));
        std::normal_distribution<double> noise(0.0, 0.06);
        cv::Mat image(height, width, CV_8U);
        cv::Mat mask(height, width, CV_8U);
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                const bool in = fg[static_cast<std::size_t>(y) * width + x] != 0;
                // Speckle: multiplicative and additive components.
                const double base = in ? lesion : background;
                const double v = base * (1.0 + noise(rng)) + 0.5 * noise(rng);
                image.at<std::uint8_t>(y, x) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
                mask.at<std::uint8_t>(y, x) = in ? 255 : 0;
            }
        }

        char name[32];
        std::snprintf(name, sizeof(name), "synth_%04d", i);
        Sample s;
        s.id = name;
        s.image_path = fs::path("images") / (s.id + ".png");
        s.mask_path = fs::path("masks") / (s.id + ".png");
        write_u8(out_dir / s.image_path, image);
        write_u8(out_dir / s.mask_path, mask);
        manifest.samples.push_back(std::move(s));
    }
    write_manifest(manifest, out_dir / "manifest.tsv");
    return manifest;
}

void write_gray_image(const fs::path& path, const Tensor<float>& image) {
    write_u8(path, to_u8(image));
}

void write_mask_image(const fs::path& path, const Tensor<float>& mask, int height, int width) {
    cv::Mat m = to_u8(mask);
    if (height > 0 && width > 0 && (m.rows != height || m.cols != width)) {
        cv::Mat r;
        cv::resize(m, r, cv::Size(width, height), 0, 0, cv::INTER_NEAREST);
        m = r;
    }
    write_u8(path, m);
}

void write_overlay(const fs::path& path, const Tensor<float>& image, const Tensor<float>& mask) {
    if (image.shape() != mask.shape()) {
        throw ShapeError("overlay image " + image.shape().str() + " and mask " + mask.shape().str() + " differ");
    }
    cv::Mat gray = to_u8(image);
    cv::Mat bgr;
    cv::cvtColor(gray, bgr, cv::COLOR_GRAY2BGR);
    const int h = gray.rows;
    const int w = gray.cols;
    auto fg = [&](int y, int x) { return mask.at(0, 0, y, x) >= 0.5f; };
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (!fg(y, x)) {
                continue;
            }
            const bool edge = (y > 0 && !fg(y - 1, x)) || (y + 1 < h && !fg(y + 1, x)) || (x > 0 && !fg(y, x - 1)) ||
                              (x + 1 < w && !fg(y, x + 1));
            if (edge) {
                bgr.at<cv::Vec3b>(y, x) = cv::Vec3b(0, 0, 255);
            }
        }
    }
    write_u8(path, bgr);
}

}  // namespace bagnet
