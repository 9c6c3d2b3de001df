struct file_operations {
	void *owner;
	long (*llseek)(void *, long, int);
	long (*read)(void *, char *, unsigned long, long *);
	long (*write)(void *, const char *, unsigned long, long *);
};
struct proto_ops {
	int family;
};
struct seq_ops {
	int x;
};
#define THIS_MODULE 0
