#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "tkgcn/tensor.hpp"

namespace tkgcn {

// Records backward closures for every differentiable op executed while the
// tape is the active one. Tapes nest: constructing a Tape pushes it onto a
// thread-local stack and its destructor pops it, so a scope with no live
// Tape runs ops without recording (inference mode).
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active() noexcept;

    void record(std::function<void()> backward_fn);
    std::size_t op_count() const { return ops_.size(); }

    struct BackwardReport {
        std::size_t ops_run = 0;
        // True when the loss reached backward() with no recorded history
        // (detached graph); gradients are then all zero.
        bool detached = false;
    };

    // Seeds d(loss)/d(loss) = 1, runs recorded closures in reverse order,
    // then clears the tape. `loss` must be a single-element tensor.
    BackwardReport backward(Tensor loss);

    void clear() { ops_.clear(); }

private:
    std::vector<std::function<void()>> ops_;
};

// True when an op called with these inputs should record onto the active
// tape: a tape exists and at least one input requires gradients.
bool grad_recording(std::initializer_list<const Tensor*> inputs);

}  // namespace tkgcn
