#include "tkgcn/tape.hpp"

#include <stdexcept>

namespace tkgcn {

namespace {
thread_local std::vector<Tape*> g_tape_stack;
}

Tape::Tape() { g_tape_stack.push_back(this); }

Tape::~Tape() {
    // Destruction order is scoped, so this tape is the top of the stack.
    if (!g_tape_stack.empty() && g_tape_stack.back() == this) g_tape_stack.pop_back();
}

Tape* Tape::active() noexcept { return g_tape_stack.empty() ? nullptr : g_tape_stack.back(); }

void Tape::record(std::function<void()> backward_fn) { ops_.push_back(std::move(backward_fn)); }

Tape::BackwardReport Tape::backward(Tensor loss) {
    if (!loss.defined() || loss.size() != 1)
        throw std::invalid_argument("backward: loss must be a single-element tensor, got " +
                                    (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    BackwardReport report;
    report.detached = ops_.empty();
    loss.zero_grad();
    loss.grad()[0] = 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
        (*it)();
        ++report.ops_run;
    }
    ops_.clear();
    return report;
}

bool grad_recording(std::initializer_list<const Tensor*> inputs) {
    if (Tape::active() == nullptr) return false;
    for (const Tensor* t : inputs)
        if (t->defined() && t->requires_grad()) return true;
    return false;
}

}  // namespace tkgcn
