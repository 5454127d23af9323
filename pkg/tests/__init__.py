"""
FCOPF 测试模块
"""
