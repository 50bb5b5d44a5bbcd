#pragma once

#include <cmath>
#include <vector>

#include "seqground/nn.hpp"

namespace seqground {

/// Runs the phrase stack over phrases given in processing order (row t is
/// the phrase handled at step t). The stack is consumed from the last row to
/// the first, so states[t] has seen exactly rows N-1, ..., t.
inline std::vector<Tensor> build_phrase_stack(const TwoLayerLstm& lstm, const Tensor& phrases, const Mode& mode) {
    std::size_t n = phrases.rows();
    if (n == 0) throw InputError("phrase stack needs at least one phrase");
    std::vector<Tensor> states(n);
    auto state = lstm.zero_state();
    for (std::size_t k = n; k-- > 0;) {
        state = lstm.step(slice_rows(phrases, k, 1), state, mode);
        states[k] = state.second.h;
    }
    return states;
}

/// Checks that location rows (x1, y1, x2, y2, ...) run left to right by
/// center x, ties by center y.
inline void require_spatial_order(const Tensor& locations) {
    if (locations.cols() < 4) throw InputError("location features need at least four columns");
    // Locations are normalized coordinates, so rounding can blur exact ties.
    constexpr double kTol = 1e-9;
    auto at = [&](std::size_t r, std::size_t c) { return locations.at(r, c); };
    for (std::size_t r = 1; r < locations.rows(); ++r) {
        double cx0 = at(r - 1, 0) + at(r - 1, 2), cx1 = at(r, 0) + at(r, 2);
        double cy0 = at(r - 1, 1) + at(r - 1, 3), cy1 = at(r, 1) + at(r, 3);
        bool tie = std::abs(cx1 - cx0) <= kTol;
        if ((!tie && cx1 < cx0) || (tie && cy1 < cy0 - kTol)) throw InputError("box stack input is not sorted left to right");
    }
}

/// Bidirectional box stack. Row i of the result is [forward state after
/// boxes 0..i, backward state after boxes M-1..i].
inline Tensor build_box_stack(const LstmCell& forward, const LstmCell& backward, const Tensor& encoded,
                              const Tensor& locations) {
    std::size_t m = encoded.rows();
    if (m == 0) throw InputError("box stack needs at least one box");
    if (locations.rows() != m) throw InputError("one location row per box is required");
    require_spatial_order(locations);
    auto inputs = concat_cols({encoded, locations});
    std::vector<Tensor> fwd(m), bwd(m);
    auto s = LstmState::zeros(1, forward.hidden);
    for (std::size_t i = 0; i < m; ++i) {
        s = forward.step(slice_rows(inputs, i, 1), s);
        fwd[i] = s.h;
    }
    s = LstmState::zeros(1, backward.hidden);
    for (std::size_t i = m; i-- > 0;) {
        s = backward.step(slice_rows(inputs, i, 1), s);
        bwd[i] = s.h;
    }
    return concat_cols({concat_rows(fwd), concat_rows(bwd)});
}

/// Grounded phrase/box pairs, most recent on top. Empty history reads as
/// the zero state.
class HistoryStack {
  public:
    HistoryStack() = default;
    explicit HistoryStack(const TwoLayerLstm* lstm) : lstm_(lstm), state_(lstm->zero_state()) {}

    std::size_t length() const { return length_; }

    Tensor top() const { return state_.second.h; }

    /// Pushes one entry [phrase, box, location] per grounded box, in the
    /// order given (callers pass boxes left to right). K = 0 is a no-op.
    void push(const Tensor& phrase, const Tensor& boxes, const Tensor& locations, const std::vector<std::size_t>& rows,
              const Mode& mode) {
        for (auto r : rows) {
            auto entry = concat_cols({phrase, slice_rows(boxes, r, 1), slice_rows(locations, r, 1)});
            state_ = lstm_->step(entry, state_, mode);
            ++length_;
        }
    }

  private:
    const TwoLayerLstm* lstm_ = nullptr;
    TwoLayerLstm::State state_;
    std::size_t length_ = 0;
};

}  // namespace seqground
