#pragma once

#include "polypdam/autograd.hpp"
#include "polypdam/checkpoint.hpp"
#include "polypdam/config.hpp"
#include "polypdam/dataset.hpp"
#include "polypdam/depth.hpp"
#include "polypdam/error.hpp"
#include "polypdam/evaluate.hpp"
#include "polypdam/image_io.hpp"
#include "polypdam/kernels.hpp"
#include "polypdam/loss.hpp"
#include "polypdam/metrics.hpp"
#include "polypdam/model.hpp"
#include "polypdam/ops.hpp"
#include "polypdam/optim.hpp"
#include "polypdam/random.hpp"
#include "polypdam/tensor.hpp"
#include "polypdam/train.hpp"
