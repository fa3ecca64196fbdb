#ifndef MSEMBED_MSEMBED_HPP
#define MSEMBED_MSEMBED_HPP

#include "binary_io.hpp"
#include "data_io.hpp"
#include "dataset.hpp"
#include "distance.hpp"
#include "errors.hpp"
#include "gradcheck.hpp"
#include "index.hpp"
#include "losses.hpp"
#include "net.hpp"
#include "ops.hpp"
#include "run_config.hpp"
#include "sampling.hpp"
#include "tensor.hpp"
#include "train.hpp"

#endif  // MSEMBED_MSEMBED_HPP
