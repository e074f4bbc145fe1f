#pragma once

// Convenience header pulling in the whole library.

#include "ace/attack.hpp"
#include "ace/confidence.hpp"
#include "ace/config.hpp"
#include "ace/dataset.hpp"
#include "ace/errors.hpp"
#include "ace/experiment.hpp"
#include "ace/format.hpp"
#include "ace/metrics.hpp"
#include "ace/model_io.hpp"
#include "ace/nn.hpp"
#include "ace/parallel.hpp"
#include "ace/report.hpp"
#include "ace/rng.hpp"
#include "ace/selnet.hpp"
#include "ace/svg.hpp"
#include "ace/tensor.hpp"
#include "ace/train.hpp"
