#pragma once

#include "hibersim/bench.hpp"
#include "hibersim/guest_memory.hpp"
#include "hibersim/host_model.hpp"
#include "hibersim/lifecycle.hpp"
#include "hibersim/page_allocator.hpp"
#include "hibersim/swap_manager.hpp"
#include "hibersim/types.hpp"
