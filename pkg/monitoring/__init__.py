"""
FCOPF 监控模块
流水线阶段耗时与求解计数
"""
