# Utils module
import threading

# 所有執行緒共用的輸出鎖
print_lock = threading.Lock()

__all__ = ['quadrature', 'output_writer', 'print_lock']
