#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cdnm/common.hpp"
#include "cdnm/image.hpp"
#include "cdnm/pipeline.hpp"
#include "cdnm/pnm_io.hpp"

namespace cdnm {

enum class DatasetKind { Flat, Cdnet, Sbmnet };

inline DatasetKind dataset_kind_from_name(const std::string& s) {
    if (s == "flat") return DatasetKind::Flat;
    if (s == "cdnet") return DatasetKind::Cdnet;
    if (s == "sbmnet") return DatasetKind::Sbmnet;
    throw UsageError("unknown dataset layout '" + s + "' (flat|cdnet|sbmnet)");
}

// Directory conventions:
//   flat   — frames directly under root
//   cdnet  — root/input, root/groundtruth (gt%06d), root/ROI.png,
//            root/temporalROI.txt ("start end", 1-based frame numbers)
//   sbmnet — root/input only
struct DatasetLayout {
    DatasetKind kind = DatasetKind::Flat;
    std::string root;
};

struct FrameRange {
    int begin = 0;           // inclusive, 0-based position in the resolved list
    int end = -1;            // exclusive; -1 means to the end
};

namespace detail {

struct IndexedFile {
    int index;
    std::string path;
};

inline bool supported_image_ext(const std::string& ext) {
    return ext == ".png" || ext == ".ppm" || ext == ".pgm";
}

// Files with a trailing integer in the stem, sorted by that integer. Frame
// inputs must be consecutively numbered; a gap is a data error naming the
// hole. Sparse listings (periodic snapshots) pass require_consecutive=false.
inline std::vector<IndexedFile> resolve_frame_files(const std::string& dir,
                                                    bool require_consecutive = true) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw DataError("frame directory '" + dir + "' does not exist");
    std::vector<IndexedFile> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        if (!supported_image_ext(ext)) continue;
        const std::string stem = entry.path().stem().string();
        int digits = 0;
        std::int64_t value = 0, mul = 1;
        for (auto it = stem.rbegin(); it != stem.rend() && std::isdigit(*it); ++it) {
            value += (*it - '0') * mul;
            mul *= 10;
            digits++;
        }
        if (digits == 0) continue;
        files.push_back({static_cast<int>(value), entry.path().string()});
    }
    if (files.empty()) throw DataError("no frames (*.png/*.ppm/*.pgm) under '" + dir + "'");
    std::sort(files.begin(), files.end(),
              [](const IndexedFile& a, const IndexedFile& b) { return a.index < b.index; });
    if (require_consecutive)
        for (std::size_t i = 1; i < files.size(); ++i)
            if (files[i].index != files[i - 1].index + 1)
                throw DataError("frame numbering gap in '" + dir + "': index " +
                                std::to_string(files[i - 1].index + 1) + " missing (between " +
                                files[i - 1].path + " and " + files[i].path + ")");
    return files;
}

inline std::string frames_dir(const DatasetLayout& layout) {
    if (layout.kind == DatasetKind::Flat) return layout.root;
    return (std::filesystem::path(layout.root) / "input").string();
}

}  // namespace detail

// Decoded frames in index order. The range addresses positions in the
// resolved list, not file numbers.
inline VideoSequence load_frames(const DatasetLayout& layout, FrameRange range = {}) {
    auto files = detail::resolve_frame_files(detail::frames_dir(layout));
    const int n = static_cast<int>(files.size());
    int begin = range.begin, end = range.end < 0 ? n : range.end;
    if (begin < 0 || begin >= n || end > n || begin >= end)
        throw UsageError("load_frames: bad range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") for " + std::to_string(n) + " frames");
    VideoSequence seq;
    seq.frames.reserve(static_cast<std::size_t>(end - begin));
    for (int i = begin; i < end; ++i)
        seq.frames.push_back(read_image(files[static_cast<std::size_t>(i)].path));
    seq.validate();
    return seq;
}

struct CdnetGroundtruth {
    std::map<int, LabelMask> labels;          // 0-based frame position -> labels
    std::optional<BinaryMask> roi;            // spatial ROI (1 = evaluate)
    int temporal_begin = 0, temporal_end = -1;  // 0-based inclusive span
};

// CDnet gray-level convention: 0 static background, 50 hard shadow (counted
// as background), 85 outside ROI, 170 unknown motion (both ignored),
// 255 foreground.
inline Label map_cdnet_level(int value, const std::string& path) {
    switch (value) {
        case 0:
        case 50: return Label::Background;
        case 85:
        case 170: return Label::Ignore;
        case 255: return Label::Foreground;
        default:
            throw DataError("'" + path + "': unexpected ground-truth gray level " +
                            std::to_string(value));
    }
}

// Loads one ground-truth mask, applying the spatial ROI and the temporal
// span (frames outside it are fully ignored). `index` is the 0-based frame
// position within the resolved input list.
inline LabelMask load_cdnet_groundtruth(const DatasetLayout& layout, int index) {
    namespace fs = std::filesystem;
    if (layout.kind != DatasetKind::Cdnet)
        throw UsageError("ground truth requires the cdnet layout");
    auto files = detail::resolve_frame_files((fs::path(layout.root) / "groundtruth").string());
    if (index < 0 || index >= static_cast<int>(files.size()))
        throw UsageError("ground-truth index " + std::to_string(index) + " out of range");
    const std::string& path = files[static_cast<std::size_t>(index)].path;
    Image8 raw = read_image(path);
    if (raw.c != 1) throw DataError("'" + path + "': ground truth must be grayscale");

    LabelMask mask = LabelMask::filled(raw.h, raw.w, Label::Background);
    for (int y = 0; y < raw.h; ++y)
        for (int x = 0; x < raw.w; ++x)
            mask.set(y, x, map_cdnet_level(raw.at(y, x, 0), path));

    // Spatial ROI: white = evaluate.
    const fs::path roi_path = fs::path(layout.root) / "ROI.png";
    if (fs::exists(roi_path)) {
        Image8 roi = read_image(roi_path.string());
        if (roi.h != raw.h || roi.w != raw.w)
            throw DataError("'" + roi_path.string() + "': ROI extents differ from ground truth");
        for (int y = 0; y < raw.h; ++y)
            for (int x = 0; x < raw.w; ++x)
                if (luma_at(roi, y, x) < 128) mask.set(y, x, Label::Ignore);
    }

    // Temporal ROI: "start end" with 1-based frame numbers.
    const fs::path troi_path = fs::path(layout.root) / "temporalROI.txt";
    if (fs::exists(troi_path)) {
        std::ifstream in(troi_path);
        int start = 0, end = 0;
        if (!(in >> start >> end))
            throw DataError("'" + troi_path.string() + "': expected two integers");
        if (index < start - 1 || index > end - 1)
            return LabelMask::filled(raw.h, raw.w, Label::Ignore);
    }
    return mask;
}

// All available ground-truth masks for a cdnet-layout sequence.
inline CdnetGroundtruth load_cdnet_all_groundtruth(const DatasetLayout& layout) {
    namespace fs = std::filesystem;
    CdnetGroundtruth out;
    auto files = detail::resolve_frame_files((fs::path(layout.root) / "groundtruth").string());
    for (int i = 0; i < static_cast<int>(files.size()); ++i)
        out.labels.emplace(i, load_cdnet_groundtruth(layout, i));
    const fs::path roi_path = fs::path(layout.root) / "ROI.png";
    if (fs::exists(roi_path)) {
        Image8 roi = read_image(roi_path.string());
        BinaryMask m = BinaryMask::zeros(roi.h, roi.w);
        for (int y = 0; y < roi.h; ++y)
            for (int x = 0; x < roi.w; ++x) m.set(y, x, luma_at(roi, y, x) >= 128 ? 1 : 0);
        out.roi = std::move(m);
    }
    const fs::path troi_path = fs::path(layout.root) / "temporalROI.txt";
    if (fs::exists(troi_path)) {
        std::ifstream in(troi_path);
        int start = 0, end = 0;
        if (in >> start >> end) {
            out.temporal_begin = start - 1;
            out.temporal_end = end - 1;
        }
    }
    return out;
}

}  // namespace cdnm
