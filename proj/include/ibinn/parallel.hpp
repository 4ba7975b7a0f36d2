#ifndef IBINN_PARALLEL_HPP
#define IBINN_PARALLEL_HPP

#include <cstddef>
#include <functional>

namespace ibinn {

// Evaluation thread cap: IBINN_THREADS when set, else hardware concurrency.
int eval_threads();

// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index writes
// only its own output slot and reductions happen in index order afterwards,
// so results are identical for any thread count.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace ibinn

#endif  // IBINN_PARALLEL_HPP
