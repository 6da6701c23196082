"""Common utilities package"""
