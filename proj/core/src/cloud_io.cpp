#include "segnn/cloud_io.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "segnn/errors.hpp"
#include "wire.hpp"

namespace segnn {
namespace {

using namespace segnn::wire;

std::string stem_of(const std::string& path) {
    const std::size_t slash = path.find_last_of('/');
    const std::size_t start = slash == std::string::npos ? 0 : slash + 1;
    const std::size_t dot = path.find_last_of('.');
    const std::size_t end = (dot == std::string::npos || dot < start) ? path.size() : dot;
    return path.substr(start, end - start);
}

LabeledCloud load_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "' for reading");

    std::string header;
    if (!std::getline(in, header)) throw ParseError("missing header", path, 1);

    std::istringstream hs(header);
    std::string magic, points_kw, color_kw, label_kw;
    long m = 0;
    int version = 0, color_flag = -1, label_flag = -1;
    hs >> magic >> version >> points_kw >> m >> color_kw >> color_flag >> label_kw >> label_flag;
    if (!hs || magic != "SNCLOUD" || version != 1 || points_kw != "POINTS" ||
        color_kw != "COLOR" || label_kw != "LABEL" || (color_flag != 0 && color_flag != 1) ||
        (label_flag != 0 && label_flag != 1))
        throw ParseError("malformed header '" + header + "'", path, 1);
    if (m < 1) throw ParseError("point count must be >= 1, got " + std::to_string(m), path, 1);

    LabeledCloud cloud;
    cloud.id = stem_of(path);
    cloud.coords.resize(m, 3);
    if (color_flag) cloud.colors.emplace(m, 3);
    if (label_flag) cloud.labels.emplace(m);

    const int arity = 3 + (color_flag ? 3 : 0) + (label_flag ? 1 : 0);
    std::string line;
    long row = 0;
    long line_no = 1;
    while (row < m) {
        if (!std::getline(in, line))
            throw ParseError("expected " + std::to_string(m) + " point rows, found " +
                                 std::to_string(row),
                             path, line_no);
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;

        std::istringstream ls(line);
        double vals[7];
        int got = 0;
        while (got < arity && (ls >> vals[got])) ++got;
        std::string trailing;
        if (got != arity || (ls >> trailing))
            throw ParseError("expected " + std::to_string(arity) + " values per row", path,
                             line_no);
        for (int c = 0; c < arity; ++c)
            if (!std::isfinite(vals[c]))
                throw ParseError("non-finite value in column " + std::to_string(c + 1), path,
                                 line_no);

        cloud.coords(row, 0) = static_cast<float>(vals[0]);
        cloud.coords(row, 1) = static_cast<float>(vals[1]);
        cloud.coords(row, 2) = static_cast<float>(vals[2]);
        int next = 3;
        if (color_flag) {
            for (int c = 0; c < 3; ++c)
                (*cloud.colors)(row, c) = static_cast<float>(vals[next + c]);
            next += 3;
        }
        if (label_flag) (*cloud.labels)(row) = static_cast<int>(std::lround(vals[next]));
        ++row;
    }
    validate_cloud(cloud);
    return cloud;
}

LabeledCloud load_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");

    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "SNC1", 4) != 0)
        throw ParseError("bad magic, expected SNC1", path, 0);

    const std::uint32_t m = read_u32_le(in);
    char color_flag = 0, label_flag = 0;
    in.get(color_flag);
    in.get(label_flag);
    if (!in) throw ParseError("truncated header", path, 4);
    if (m < 1) throw ParseError("point count must be >= 1", path, 4);
    if ((color_flag != 0 && color_flag != 1) || (label_flag != 0 && label_flag != 1))
        throw ParseError("flag bytes must be 0 or 1", path, 8);

    LabeledCloud cloud;
    cloud.id = stem_of(path);
    cloud.coords.resize(m, 3);
    for (std::uint32_t i = 0; i < m; ++i)
        for (int c = 0; c < 3; ++c) cloud.coords(i, c) = read_f32_le(in);
    if (color_flag) {
        cloud.colors.emplace(m, 3);
        for (std::uint32_t i = 0; i < m; ++i)
            for (int c = 0; c < 3; ++c) (*cloud.colors)(i, c) = read_f32_le(in);
    }
    if (label_flag) {
        cloud.labels.emplace(m);
        for (std::uint32_t i = 0; i < m; ++i) (*cloud.labels)(i) = read_i32_le(in);
    }
    if (!in)
        throw ParseError("declared " + std::to_string(m) + " points but file is shorter", path,
                         static_cast<long>(in.gcount()));
    in.peek();
    if (!in.eof()) throw ParseError("trailing bytes after declared point data", path, 0);
    validate_cloud(cloud);
    return cloud;
}

void save_text(const LabeledCloud& cloud, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << "SNCLOUD 1 POINTS " << cloud.size() << " COLOR " << (cloud.colors ? 1 : 0) << " LABEL "
        << (cloud.labels ? 1 : 0) << "\n";
    char buf[64];
    for (int i = 0; i < cloud.size(); ++i) {
        for (int c = 0; c < 3; ++c) {
            std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(cloud.coords(i, c)));
            out << (c ? " " : "") << buf;
        }
        if (cloud.colors) {
            for (int c = 0; c < 3; ++c) {
                std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>((*cloud.colors)(i, c)));
                out << ' ' << buf;
            }
        }
        if (cloud.labels) out << ' ' << (*cloud.labels)(i);
        out << '\n';
    }
    if (!out) throw IoError("write failure on '" + path + "'");
}

void save_binary(const LabeledCloud& cloud, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write("SNC1", 4);
    write_u32_le(out, static_cast<std::uint32_t>(cloud.size()));
    out.put(cloud.colors ? 1 : 0);
    out.put(cloud.labels ? 1 : 0);
    for (int i = 0; i < cloud.size(); ++i)
        for (int c = 0; c < 3; ++c) write_f32_le(out, cloud.coords(i, c));
    if (cloud.colors)
        for (int i = 0; i < cloud.size(); ++i)
            for (int c = 0; c < 3; ++c) write_f32_le(out, (*cloud.colors)(i, c));
    if (cloud.labels)
        for (int i = 0; i < cloud.size(); ++i) write_i32_le(out, (*cloud.labels)(i));
    if (!out) throw IoError("write failure on '" + path + "'");
}

}  // namespace

CloudFormat cloud_format_from_path(const std::string& path) {
    if (path.size() >= 8 && path.compare(path.size() - 8, 8, ".sncloud") == 0)
        return CloudFormat::kText;
    if (path.size() >= 5 && path.compare(path.size() - 5, 5, ".sncb") == 0)
        return CloudFormat::kBinary;
    throw ArgumentError("cannot infer cloud format from '" + path +
                        "' (expected .sncloud or .sncb)");
}

LabeledCloud load_cloud(const std::string& path, CloudFormat format) {
    return format == CloudFormat::kText ? load_text(path) : load_binary(path);
}

void save_cloud(const LabeledCloud& cloud, const std::string& path, CloudFormat format) {
    validate_cloud(cloud);
    if (format == CloudFormat::kText)
        save_text(cloud, path);
    else
        save_binary(cloud, path);
}

}  // namespace segnn
