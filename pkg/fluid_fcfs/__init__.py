"""
Fluid-model analysis and FCFS-ALIS simulation of parallel skill-based service systems
"""

__version__ = "1.0.0"
