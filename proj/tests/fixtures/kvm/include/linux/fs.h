/* SPDX-License-Identifier: GPL-2.0 */
#ifndef _LINUX_FS_H
#define _LINUX_FS_H

#include <linux/types.h>

struct inode;

struct file {
	void			*private_data;
	unsigned int		f_flags;
};

struct file_operations {
	struct module *owner;
	long (*llseek) (struct file *, long, int);
	long (*read) (struct file *, char __user *, size_t, long *);
	long (*write) (struct file *, const char __user *, size_t, long *);
	unsigned int (*poll) (struct file *, void *);
	long (*unlocked_ioctl) (struct file *, unsigned int, unsigned long);
	long (*compat_ioctl) (struct file *, unsigned int, unsigned long);
	int (*mmap) (struct file *, void *);
	int (*open) (struct inode *, struct file *);
	int (*release) (struct inode *, struct file *);
};

extern long noop_llseek(struct file *file, long offset, int whence);
extern int nonseekable_open(struct inode *inode, struct file *filp);

#endif /* _LINUX_FS_H */
