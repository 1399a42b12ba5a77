#include "io.hpp"

#include <json.hpp>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace sfgp::io {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string format_double(double v) {
    char buf[32];
    const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf, static_cast<std::size_t>(n));
}

bool parse_double(std::string_view token, double& out) {
    while (!token.empty() && (token.front() == ' ' || token.front() == '\t')) token.remove_prefix(1);
    while (!token.empty() && (token.back() == ' ' || token.back() == '\t' || token.back() == '\r')) {
        token.remove_suffix(1);
    }
    if (token.empty()) return false;
    const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), out);
    return ec == std::errc() && ptr == token.data() + token.size();
}

std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(sep, start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

template <typename T>
std::vector<T> mask_vector(const std::vector<std::uint8_t>& m) {
    return std::vector<T>(m.begin(), m.end());
}

}  // namespace

void write_text_atomic(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::Io, "cannot open " + tmp.string() + " for writing");
        out << content;
        if (!out) throw Error(ErrorCode::Io, "failed writing " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw Error(ErrorCode::Io, "cannot move " + tmp.string() + " into place: " + ec.message());
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_points_csv(const PointSet& points, const fs::path& path, bool header) {
    std::string out;
    if (header) out += points.dim() == 2 ? "x,y\n" : "x,y,z\n";
    for (Index i = 0; i < points.size(); ++i) {
        for (int c = 0; c < points.dim(); ++c) {
            if (c) out += ',';
            out += format_double(points.coords()(i, c));
        }
        out += '\n';
    }
    write_text_atomic(path, out);
}

PointSet read_points_csv(const fs::path& path) {
    const std::string text = read_text(path);
    std::vector<double> values;
    Index dim = 0;
    std::size_t line_no = 0;
    bool first_row = true;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        const auto fields = split(line, ',');
        std::vector<double> row;
        bool numeric = true;
        for (auto f : fields) {
            double v = 0.0;
            if (!parse_double(f, v)) {
                numeric = false;
                break;
            }
            row.push_back(v);
        }
        if (!numeric) {
            if (first_row) {
                first_row = false;
                continue;  // header
            }
            throw Error(ErrorCode::Io, path.string() + ":" + std::to_string(line_no) + ": non-numeric field");
        }
        first_row = false;
        if (dim == 0) dim = static_cast<Index>(row.size());
        if (static_cast<Index>(row.size()) != dim) {
            throw Error(ErrorCode::Io, path.string() + ":" + std::to_string(line_no) + ": expected " +
                                           std::to_string(dim) + " columns");
        }
        values.insert(values.end(), row.begin(), row.end());
    }
    if (values.empty()) throw Error(ErrorCode::Io, path.string() + ": no points");
    return PointSet::from_flat(values, dim);
}

std::string perturbation_to_json(const PerturbationSpec& spec) {
    json j;
    j["warp_amplitude"] = spec.warp_amplitude;
    j["warp_bandwidth"] = spec.warp_bandwidth;
    j["warp_controls"] = spec.warp_controls;
    j["missing_width"] = spec.missing_width;
    j["missing_center"] = spec.missing_center ? json(*spec.missing_center) : json("random");
    j["outlier_ratio"] = spec.outlier_ratio;
    j["noise_std"] = spec.noise_std;
    j["rotation_max"] = spec.rotation_max;
    j["seed"] = spec.seed;
    return j.dump();
}

namespace {

PerturbationSpec perturbation_from(const json& j) {
    PerturbationSpec spec;
    spec.warp_amplitude = j.value("warp_amplitude", spec.warp_amplitude);
    spec.warp_bandwidth = j.value("warp_bandwidth", spec.warp_bandwidth);
    spec.warp_controls = j.value("warp_controls", spec.warp_controls);
    spec.missing_width = j.value("missing_width", spec.missing_width);
    if (j.contains("missing_center") && j["missing_center"].is_number_integer()) {
        spec.missing_center = j["missing_center"].get<Index>();
    }
    spec.outlier_ratio = j.value("outlier_ratio", spec.outlier_ratio);
    spec.noise_std = j.value("noise_std", spec.noise_std);
    spec.rotation_max = j.value("rotation_max", spec.rotation_max);
    spec.seed = j.value("seed", spec.seed);
    return spec;
}

}  // namespace

PerturbationSpec perturbation_from_json(const std::string& text) {
    try {
        return perturbation_from(json::parse(text));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::Io, std::string("invalid perturbation json: ") + e.what());
    }
}

void write_instance(const SyntheticInstance& instance, const fs::path& dir) {
    fs::create_directories(dir);
    write_points_csv(instance.target, dir / "target.csv");
    write_points_csv(instance.ground_truth, dir / "ground_truth.csv");
    json m;
    m["schema_version"] = 1;
    m["spec"] = json::parse(perturbation_to_json(instance.spec));
    m["missing_mask"] = mask_vector<int>(instance.missing_mask);
    m["outlier_mask"] = mask_vector<int>(instance.outlier_mask);
    m["target_to_ref"] = instance.target_to_ref;
    write_text_atomic(dir / "manifest.json", m.dump(1) + "\n");
}

SyntheticInstance read_instance(const fs::path& dir) {
    SyntheticInstance inst;
    inst.target = read_points_csv(dir / "target.csv");
    inst.ground_truth = read_points_csv(dir / "ground_truth.csv");
    try {
        const json m = json::parse(read_text(dir / "manifest.json"));
        if (m.value("schema_version", 0) != 1) throw Error(ErrorCode::Io, "unsupported manifest schema version");
        inst.spec = perturbation_from(m.at("spec"));
        for (int v : m.at("missing_mask").get<std::vector<int>>()) inst.missing_mask.push_back(v ? 1 : 0);
        for (int v : m.at("outlier_mask").get<std::vector<int>>()) inst.outlier_mask.push_back(v ? 1 : 0);
        inst.target_to_ref = m.at("target_to_ref").get<std::vector<Index>>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::Io, (dir / "manifest.json").string() + ": " + e.what());
    }
    if (inst.missing_mask.size() != static_cast<std::size_t>(inst.ground_truth.size()) ||
        inst.outlier_mask.size() != static_cast<std::size_t>(inst.target.size()) ||
        inst.target_to_ref.size() != static_cast<std::size_t>(inst.target.size())) {
        throw Error(ErrorCode::Io, (dir / "manifest.json").string() + ": masks do not match the point files");
    }
    return inst;
}

std::string result_summary_json(const RegistrationResult& result) {
    json j;
    j["schema_version"] = 1;
    j["iters"] = result.iters;
    j["converged"] = result.converged;
    j["failed"] = result.failed;
    j["collapsed"] = result.collapsed;
    j["inliers"] = result.state.inliers;
    j["missing"] = result.state.missing;
    j["nu"] = std::vector<double>(result.state.nu.data(), result.state.nu.data() + result.state.nu.size());
    j["sigma2"] = std::vector<double>(result.sigma2.data(), result.sigma2.data() + result.sigma2.size());
    return j.dump(1) + "\n";
}

ResultSummary parse_result_summary(const std::string& text) {
    try {
        const json j = json::parse(text);
        ResultSummary s;
        s.iters = j.at("iters").get<int>();
        s.converged = j.at("converged").get<bool>();
        s.failed = j.at("failed").get<bool>();
        s.collapsed = j.at("collapsed").get<bool>();
        s.inliers = j.at("inliers").get<std::vector<Index>>();
        s.missing = j.at("missing").get<std::vector<Index>>();
        s.nu = j.at("nu").get<std::vector<double>>();
        s.sigma2 = j.at("sigma2").get<std::vector<double>>();
        return s;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::Io, std::string("invalid result summary: ") + e.what());
    }
}

}  // namespace sfgp::io
