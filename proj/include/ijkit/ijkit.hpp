#pragma once

#include "ijkit/bounds.hpp"
#include "ijkit/core.hpp"
#include "ijkit/errors.hpp"
#include "ijkit/harness.hpp"
#include "ijkit/ij.hpp"
#include "ijkit/linalg.hpp"
#include "ijkit/models.hpp"
#include "ijkit/random.hpp"
#include "ijkit/solver.hpp"
#include "ijkit/stacked.hpp"
#include "ijkit/weights.hpp"
