"""PO-Forge
============

Identification and double-robust estimation of causal functionals in
discrete-instrument potential-outcomes models defined by a finite support
restriction on response types.

"""
import os

# the study events are kivy event dispatchers; kivy must not parse the
# command line of the host program
os.environ.setdefault('KIVY_NO_ARGS', '1')

__version__ = '1.0.0.dev0'

REPORT_SCHEMA = 'po-forge/1'
"""The schema tag written into every JSON report.
"""
