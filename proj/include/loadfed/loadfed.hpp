#pragma once

#include "loadfed/clustering.hpp"
#include "loadfed/dataio.hpp"
#include "loadfed/eval.hpp"
#include "loadfed/experiment.hpp"
#include "loadfed/features.hpp"
#include "loadfed/fed.hpp"
#include "loadfed/model_io.hpp"
#include "loadfed/nn.hpp"
#include "loadfed/random.hpp"
#include "loadfed/text.hpp"
#include "loadfed/time.hpp"
