// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fairtk/error.hpp"

namespace fairtk {

struct Box {
    double x1 = 0.0;
    double y1 = 0.0;
    double x2 = 0.0;
    double y2 = 0.0;

    double area() const { return (x2 - x1) * (y2 - y1); }

    void validate(const std::string& context) const {
        if (!std::isfinite(x1) || !std::isfinite(y1) || !std::isfinite(x2) || !std::isfinite(y2))
            throw ValidationError(context + ": non-finite box coordinate");
        if (!(x1 < x2) || !(y1 < y2)) throw ValidationError(context + ": degenerate box");
    }
};

/// Intersection over union of two axis-aligned boxes, 0 when disjoint.
inline double iou(const Box& a, const Box& b) {
    const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    const double inter = ix * iy;
    if (inter <= 0.0) return 0.0;
    return inter / (a.area() + b.area() - inter);
}

enum class TrackFlag { anchored, matched, carried, ambiguous };

inline std::string to_string(TrackFlag f) {
    switch (f) {
    case TrackFlag::anchored: return "anchored";
    case TrackFlag::matched: return "matched";
    case TrackFlag::carried: return "carried";
    case TrackFlag::ambiguous: return "ambiguous";
    }
    return "?";
}

struct TrackInput {
    int frames = 0;
    std::vector<std::vector<Box>> detections; // one list per frame, possibly empty
    std::map<int, Box> anchors;               // frame index -> verified box

    void validate() const {
        if (frames < 1) throw ValidationError("track input: needs at least one frame");
        if (static_cast<int>(detections.size()) != frames)
            throw ValidationError("track input: " + std::to_string(detections.size()) +
                                  " detection lists for " + std::to_string(frames) + " frames");
        if (anchors.empty()) throw ValidationError("track input: needs at least one anchor");
        for (const auto& [frame, box] : anchors) {
            if (frame < 0 || frame >= frames)
                throw ValidationError("track input: anchor frame " + std::to_string(frame) +
                                      " outside [0," + std::to_string(frames) + ")");
            box.validate("anchor at frame " + std::to_string(frame));
        }
        for (int f = 0; f < frames; ++f)
            for (std::size_t i = 0; i < detections[static_cast<std::size_t>(f)].size(); ++i)
                detections[static_cast<std::size_t>(f)][i].validate(
                    "detection " + std::to_string(i) + " at frame " + std::to_string(f));
    }
};

struct TrackResult {
    std::vector<Box> track;
    std::vector<TrackFlag> flags;
};

namespace detail {

/// Max-IOU step against one frame's detections. Empty list or all-zero IOU
/// carries the previous box (flagged); IOU ties pick the lowest index.
inline std::pair<Box, TrackFlag> propagate_step(const Box& previous,
                                                const std::vector<Box>& detections) {
    if (detections.empty()) return {previous, TrackFlag::carried};
    double best = 0.0;
    std::size_t best_index = 0;
    for (std::size_t i = 0; i < detections.size(); ++i) {
        const double score = iou(previous, detections[i]);
        if (score > best) {
            best = score;
            best_index = i;
        }
    }
    if (best == 0.0) return {previous, TrackFlag::ambiguous};
    return {detections[best_index], TrackFlag::matched};
}

} // namespace detail

/// Bidirectional max-IOU propagation from the verified anchor boxes. Each
/// frame takes the chain started at its nearest anchor (ties go to the
/// earlier anchor). Degenerate frames are flagged, never rejected.
inline TrackResult propagate(const TrackInput& input) {
    input.validate();
    const int F = input.frames;

    std::vector<int> anchor_frames;
    for (const auto& [frame, box] : input.anchors) anchor_frames.push_back(frame);

    // Nearest anchor per frame; map anchors are already sorted by frame.
    std::vector<int> owner(static_cast<std::size_t>(F));
    for (int f = 0; f < F; ++f) {
        int best = anchor_frames.front();
        for (int a : anchor_frames)
            if (std::abs(a - f) < std::abs(best - f)) best = a;
        owner[static_cast<std::size_t>(f)] = best;
    }

    TrackResult result;
    result.track.resize(static_cast<std::size_t>(F));
    result.flags.resize(static_cast<std::size_t>(F));
    for (const int a : anchor_frames) {
        const Box anchor_box = input.anchors.at(a);
        result.track[static_cast<std::size_t>(a)] = anchor_box;
        result.flags[static_cast<std::size_t>(a)] = TrackFlag::anchored;
        Box current = anchor_box;
        for (int f = a + 1; f < F && owner[static_cast<std::size_t>(f)] == a; ++f) {
            const auto [box, flag] = detail::propagate_step(current, input.detections[static_cast<std::size_t>(f)]);
            result.track[static_cast<std::size_t>(f)] = box;
            result.flags[static_cast<std::size_t>(f)] = flag;
            current = box;
        }
        current = anchor_box;
        for (int f = a - 1; f >= 0 && owner[static_cast<std::size_t>(f)] == a; --f) {
            const auto [box, flag] = detail::propagate_step(current, input.detections[static_cast<std::size_t>(f)]);
            result.track[static_cast<std::size_t>(f)] = box;
            result.flags[static_cast<std::size_t>(f)] = flag;
            current = box;
        }
    }
    return result;
}

inline nlohmann::json box_to_json(const Box& b) { return {b.x1, b.y1, b.x2, b.y2}; }

inline Box box_from_json(const nlohmann::json& j, const std::string& context) {
    if (!j.is_array() || j.size() != 4)
        throw ValidationError(context + ": box must be [x1,y1,x2,y2]");
    Box b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
    b.validate(context);
    return b;
}

inline TrackInput track_input_from_json(const nlohmann::json& j) {
    TrackInput input;
    try {
        input.frames = j.at("frames").get<int>();
        for (const auto& frame_dets : j.at("detections")) {
            std::vector<Box> boxes;
            for (const auto& d : frame_dets)
                boxes.push_back(box_from_json(d, "detection"));
            input.detections.push_back(std::move(boxes));
        }
        for (const auto& [key, value] : j.at("anchors").items()) {
            char* end = nullptr;
            const long frame = std::strtol(key.c_str(), &end, 10);
            if (end == key.c_str() || *end != '\0')
                throw ValidationError("track input: anchor key '" + key + "' is not a frame index");
            input.anchors[static_cast<int>(frame)] = box_from_json(value, "anchor " + key);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("track input JSON: ") + e.what());
    }
    input.validate();
    return input;
}

inline nlohmann::json track_result_to_json(const TrackResult& result) {
    nlohmann::json track = nlohmann::json::array();
    nlohmann::json flags = nlohmann::json::array();
    for (std::size_t f = 0; f < result.track.size(); ++f) {
        track.push_back(box_to_json(result.track[f]));
        flags.push_back(to_string(result.flags[f]));
    }
    return {{"track", track}, {"flags", flags}};
}

} // namespace fairtk
