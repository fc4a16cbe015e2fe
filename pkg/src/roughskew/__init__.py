"""Rough Bergomi simulation and zero-vanna smile analytics.

The package has three layers:

* model-free pricing utilities (:mod:`roughskew.blackscholes`,
  :mod:`roughskew.smile`, :mod:`roughskew.strikes`);
* the rough Bergomi engine — exact-in-law Gaussian sampling from
  covariance kernels plus plain and conditional Monte Carlo pricing
  (:mod:`roughskew.rbergomi`, :mod:`roughskew.pricer`);
* experiment drivers that tie the two together: skew/covariance reports,
  a smile-based Hurst estimator and the command line interface
  (:mod:`roughskew.analytics`, :mod:`roughskew.cli`).
"""

__version__ = "0.1.0"
