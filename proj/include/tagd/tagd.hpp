#pragma once

#define TAGD_VERSION "1.0.0"

#include "tagd/core.hpp"
#include "tagd/error.hpp"
#include "tagd/ingest.hpp"
#include "tagd/preprocess.hpp"
#include "tagd/metrics.hpp"
#include "tagd/svm.hpp"
#include "tagd/nn.hpp"
#include "tagd/cnn.hpp"
#include "tagd/dcgan.hpp"
