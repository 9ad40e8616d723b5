"""
Configuration - Process settings, experiment files and logging setup
"""
