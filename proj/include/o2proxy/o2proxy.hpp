#pragma once

// Umbrella header: the simulated core group, the offload runtime, the proxy
// kernels, the initialization-communication benchmarks, checkpointing and
// comparison, and the profiler.

#include "o2proxy/archsim.hpp"
#include "o2proxy/errors.hpp"
#include "o2proxy/flatbin.hpp"
#include "o2proxy/initcomm.hpp"
#include "o2proxy/kernels.hpp"
#include "o2proxy/offload.hpp"
#include "o2proxy/profile.hpp"
#include "o2proxy/verify.hpp"
