# app/logic/__init__.py
# ทำให้ไดเรกทอรีนี้เป็นแพกเกจ Python
# (ปล่อยว่างก็ได้ แต่ใส่ __all__ ไว้ช่วย tooling/IDE)
__all__ = []
