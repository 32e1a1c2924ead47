# app/__init__.py
# ทำให้ app เป็น package
